import { ApiClient } from "./api.js";
import { DendrogramView } from "./dendrogram.js";
import { bindArrowKeys } from "./keyboard.js";
import { QuestionFlow } from "./question.js";
import { renderDendrogram, renderFlowState } from "./render.js";

function annotatorId(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("annotator");
  if (fromQuery) return fromQuery;
  const stored = window.localStorage.getItem("twoafc-annotator");
  if (stored) return stored;
  const generated = `anon-${Math.random().toString(36).slice(2, 10)}`;
  window.localStorage.setItem("twoafc-annotator", generated);
  return generated;
}

async function refreshProgress(api: ApiClient, node: HTMLElement): Promise<void> {
  try {
    const s = await api.session();
    node.textContent =
      `round ${s.round} · ${s.phase} · ${s.answered} answered, ${s.pending} pending` +
      (s.converged ? " · converged" : "");
  } catch {
    node.textContent = "service unreachable";
  }
}

export function boot(): void {
  const api = new ApiClient("");
  const annotator = annotatorId();
  const questionRoot = document.getElementById("question-root") as HTMLElement;
  const progress = document.getElementById("progress") as HTMLElement;
  const treeRoot = document.getElementById("tree-root") as HTMLElement;
  const treeRefresh = document.getElementById("tree-refresh") as HTMLButtonElement;

  const flow = new QuestionFlow(api, annotator, (state) => {
    renderFlowState(questionRoot, api, flow, state);
    void refreshProgress(api, progress);
  });
  bindArrowKeys(window, (choice) => void flow.choose(choice));
  void flow.start();

  const tree = new DendrogramView(null);
  const repaintTree = () => renderDendrogram(treeRoot, api, tree, repaintTree);
  treeRefresh.addEventListener("click", () => {
    void api
      .dendrogram()
      .then((root) => {
        tree.setRoot(root);
        repaintTree();
      })
      .catch(() => {
        tree.setRoot(null);
        repaintTree();
      });
  });
  repaintTree();
}

if (typeof document !== "undefined" && document.getElementById("question-root")) {
  boot();
}
