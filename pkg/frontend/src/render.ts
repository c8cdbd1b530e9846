/** DOM rendering for the question screen and the dendrogram explorer. */

import { ApiClient, QuestionView, TreeNode } from "./api.js";
import { DendrogramView, isLeaf, leafIds } from "./dendrogram.js";
import { FlowState, QuestionFlow } from "./question.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function option(
  api: ApiClient,
  flow: QuestionFlow,
  view: QuestionView,
  slot: "A" | "B",
): HTMLElement {
  const url = slot === "A" ? view.option_a_url : view.option_b_url;
  const card = el("button", "option-card");
  card.dataset.choice = slot;
  const img = el("img", "option-image");
  img.src = api.imageUrl(url);
  img.alt = `option ${slot}`;
  img.addEventListener("error", () => flow.release(`image for option ${slot} failed to load`));
  card.append(img, el("div", "option-label", `${slot === "A" ? "← " : ""}Option ${slot}${slot === "B" ? " →" : ""}`));
  card.addEventListener("click", () => void flow.choose(slot));
  return card;
}

export function renderFlowState(
  root: HTMLElement,
  api: ApiClient,
  flow: QuestionFlow,
  state: FlowState,
): void {
  root.replaceChildren();
  switch (state.kind) {
    case "loading":
      root.append(el("p", "status", "Loading…"));
      return;
    case "done":
      root.append(
        el("h2", "status done-screen", "No questions pending"),
        el("p", "status", "This round's batch is exhausted. Thank you!"),
      );
      return;
    case "error": {
      const banner = el("div", "banner error-banner");
      banner.append(el("span", undefined, state.message));
      const retry = el("button", "retry", "Retry");
      retry.addEventListener("click", () => void flow.start());
      banner.append(retry);
      root.append(banner);
      if (state.view) root.append(questionLayout(api, flow, state.view));
      return;
    }
    case "question":
      root.append(questionLayout(api, flow, state.view));
      return;
  }
}

function questionLayout(api: ApiClient, flow: QuestionFlow, view: QuestionView): HTMLElement {
  const wrap = el("div", "question");
  wrap.append(el("p", "prompt", view.prompt));
  const anchor = el("div", "anchor");
  const anchorImg = el("img", "anchor-image");
  anchorImg.src = api.imageUrl(view.anchor_url);
  anchorImg.alt = "anchor";
  anchorImg.addEventListener("error", () => flow.release("anchor image failed to load"));
  anchor.append(anchorImg, el("div", "anchor-label", "Anchor"));
  const options = el("div", "options");
  options.append(option(api, flow, view, "A"), option(api, flow, view, "B"));
  wrap.append(anchor, options);
  return wrap;
}

export function renderDendrogram(
  root: HTMLElement,
  api: ApiClient,
  view: DendrogramView,
  onToggle: () => void,
): void {
  root.replaceChildren();
  if (view.root === null) {
    root.append(el("p", "status placeholder", "No dendrogram yet: train at least one round."));
    return;
  }
  root.append(renderNode(api, view, view.root, [], onToggle));
}

function renderNode(
  api: ApiClient,
  view: DendrogramView,
  node: TreeNode,
  path: number[],
  onToggle: () => void,
): HTMLElement {
  const container = el("div", "tree-node");
  const row = el("div", "tree-row");
  const members = leafIds(node);
  if (isLeaf(node)) {
    row.append(el("span", "tree-leaf", node.id ?? ""));
    container.append(row, thumbnails(api, members));
    return container;
  }
  const expanded = view.isExpanded(path);
  const toggle = el("button", "tree-toggle", expanded ? "−" : "+");
  toggle.addEventListener("click", () => {
    view.toggle(path);
    onToggle();
  });
  row.append(
    toggle,
    el("span", "tree-meta", `${members.length} images · height ${node.height.toFixed(3)}`),
  );
  container.append(row);
  if (expanded) {
    container.append(thumbnails(api, members.slice(0, 24)));
    const children = el("div", "tree-children");
    (node.children ?? []).forEach((child, i) => {
      children.append(renderNode(api, view, child, [...path, i], onToggle));
    });
    container.append(children);
  }
  return container;
}

function thumbnails(api: ApiClient, ids: string[]): HTMLElement {
  const grid = el("div", "thumb-grid");
  for (const id of ids) {
    const img = el("img", "thumb");
    img.src = api.imageUrl(`/api/image/${id}`);
    img.alt = id;
    img.title = id;
    grid.append(img);
  }
  return grid;
}
