/** Forced-choice flow: fetch a question, capture exactly one choice, advance.
 *
 * Every recorded answer corresponds to exactly one user gesture: while a
 * submission is in flight (or nothing is displayed) further choices are
 * ignored, which also suppresses double-clicks.
 */

import { ApiClient, Choice, QuestionView } from "./api.js";

export type FlowState =
  | { kind: "loading" }
  | { kind: "question"; view: QuestionView }
  | { kind: "done" }
  | { kind: "error"; message: string; view: QuestionView | null };

export class QuestionFlow {
  private current: QuestionView | null = null;
  private inFlight = false;

  constructor(
    private readonly api: ApiClient,
    private readonly annotatorId: string,
    private readonly onChange: (state: FlowState) => void,
  ) {}

  get question(): QuestionView | null {
    return this.current;
  }

  async start(): Promise<void> {
    this.onChange({ kind: "loading" });
    try {
      const view = await this.api.nextQuestion(this.annotatorId);
      this.current = view;
      this.onChange(view === null ? { kind: "done" } : { kind: "question", view });
    } catch (err) {
      this.current = null;
      this.onChange({ kind: "error", message: describe(err), view: null });
    }
  }

  /** Submit the forced choice; no-op when nothing is shown or a post is in flight. */
  async choose(choice: Choice): Promise<void> {
    if (this.current === null || this.inFlight) return;
    const view = this.current;
    this.inFlight = true;
    this.current = null; // optimistic: the gesture consumed this question
    this.onChange({ kind: "loading" });
    try {
      await this.api.submitAnswer(view.question_id, choice, this.annotatorId);
    } catch (err) {
      // rejected submission: restore the question with an error notice
      this.current = view;
      this.inFlight = false;
      this.onChange({ kind: "error", message: describe(err), view });
      return;
    }
    this.inFlight = false;
    await this.start();
  }

  /** Drop the displayed question (e.g. its images failed to load); the lease expires server-side. */
  release(message: string): void {
    if (this.current === null) return;
    this.current = null;
    this.onChange({ kind: "error", message, view: null });
  }
}

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}
