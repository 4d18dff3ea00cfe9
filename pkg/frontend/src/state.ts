import type { ApiClient } from "./api.js";
import type { ItemPayload, Mode, VetDecision, VetReason } from "./types.js";

export type Phase = "idle" | "loading" | "item" | "done" | "error";

export type SubmitResult = "submitted" | "invalid" | "busy" | "done";

/**
 * Drives one participant session: fetch item, validate input locally,
 * submit, advance. There is deliberately no way back to an earlier item.
 */
export class SessionFlow {
  phase: Phase = "idle";
  item: ItemPayload | null = null;
  completed = 0;
  lastError: string | null = null;
  private busy = false;

  constructor(
    private readonly api: ApiClient,
    readonly mode: Mode,
  ) {}

  async start(participantLabel: string): Promise<void> {
    this.phase = "loading";
    await this.api.createSession(participantLabel, this.mode);
    await this.advance();
  }

  async advance(): Promise<void> {
    this.phase = "loading";
    try {
      this.item = await this.api.nextItem();
      this.phase = this.item === null ? "done" : "item";
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      this.phase = "error";
    }
  }

  /** Client-side mirror of the service's letter validation. */
  canPick(letter: string): boolean {
    return this.item !== null && this.item.letters.includes(letter);
  }

  async submitLetter(letter: string): Promise<SubmitResult> {
    if (this.phase !== "item" || this.item === null) return "done";
    if (this.busy) return "busy";
    if (!this.canPick(letter)) return "invalid"; // no request leaves the client
    this.busy = true;
    try {
      await this.api.submitAnswer(this.item.pair_id, letter);
      this.completed += 1;
      await this.advance();
      return "submitted";
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      this.phase = "error";
      return "done";
    } finally {
      this.busy = false;
    }
  }

  async submitVet(decision: VetDecision, reason: VetReason | null, note = ""): Promise<SubmitResult> {
    if (this.phase !== "item" || this.item === null) return "done";
    if (this.busy) return "busy";
    if (decision === "reject" && reason === null) return "invalid";
    this.busy = true;
    try {
      await this.api.submitVet(this.item.pair_id, decision, reason, note);
      this.completed += 1;
      await this.advance();
      return "submitted";
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      this.phase = "error";
      return "done";
    } finally {
      this.busy = false;
    }
  }

  async retry(): Promise<void> {
    if (this.phase === "error") await this.advance();
  }

  progressText(): string {
    if (this.item === null) return `${this.completed} completed`;
    const { done, total } = this.item.progress;
    return `${done} / ${total}`;
  }
}
