/** Typed client for the annotation service HTTP+JSON API. */

export type Choice = "A" | "B";

export interface QuestionView {
  question_id: string;
  anchor_url: string;
  option_a_url: string;
  option_b_url: string;
  prompt: string;
}

export interface SessionState {
  round: number;
  phase: string;
  pending: number;
  leased: number;
  answered: number;
  checkpoint: string | null;
  converged: boolean;
}

export interface TreeNode {
  id?: string;
  height: number;
  children?: TreeNode[];
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function expectOk(response: Response): Promise<Response> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      if (body && typeof body.error === "string") detail = body.error;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return response;
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  async session(): Promise<SessionState> {
    const response = await expectOk(await fetch(`${this.base}/api/session`));
    return (await response.json()) as SessionState;
  }

  /** Lease the next question; null when the round's batch is exhausted (204). */
  async nextQuestion(annotatorId: string): Promise<QuestionView | null> {
    const url = `${this.base}/api/question?annotator=${encodeURIComponent(annotatorId)}`;
    const response = await expectOk(await fetch(url));
    if (response.status === 204) return null;
    return (await response.json()) as QuestionView;
  }

  async submitAnswer(questionId: string, choice: Choice, annotatorId: string): Promise<void> {
    await expectOk(
      await fetch(`${this.base}/api/answer`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({
          question_id: questionId,
          choice,
          annotator_id: annotatorId,
        }),
      }),
    );
  }

  /** The current dendrogram, or null when no checkpoint exists yet (409). */
  async dendrogram(): Promise<TreeNode | null> {
    const response = await fetch(`${this.base}/api/dendrogram`);
    if (response.status === 409) return null;
    await expectOk(response);
    return (await response.json()) as TreeNode;
  }

  imageUrl(path: string): string {
    return `${this.base}${path}`;
  }
}
