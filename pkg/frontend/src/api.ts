import type { AnswerAck, ItemPayload, Mode, NextResponse, SessionInfo, VetDecision, VetReason } from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status?: number,
  ) {
    super(message);
  }
}

type FetchLike = typeof fetch;

const newSubmissionId = (): string =>
  `sub-${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 10)}`;

/**
 * Thin client over the study service API. Submissions carry a client-generated
 * submission_id and retry on network failures, so an acknowledged write is
 * recorded exactly once even when the first response got lost.
 */
export class ApiClient {
  private token: string | null = null;

  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = fetch,
    private readonly retryDelayMs: number = 400,
  ) {}

  private headers(): Record<string, string> {
    const h: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) h["Authorization"] = `Bearer ${this.token}`;
    return h;
  }

  private async request<T>(method: string, path: string, body?: unknown, retries = 2): Promise<T> {
    let lastError: unknown = null;
    for (let attempt = 0; attempt <= retries; attempt++) {
      if (attempt > 0) await new Promise((r) => setTimeout(r, this.retryDelayMs * attempt));
      try {
        const resp = await this.fetchFn(this.baseUrl + path, {
          method,
          headers: this.headers(),
          body: body === undefined ? undefined : JSON.stringify(body),
        });
        if (!resp.ok) {
          // 4xx never heals on retry; surface it immediately
          if (resp.status < 500) throw new ApiError(await resp.text(), resp.status);
          lastError = new ApiError(`server error ${resp.status}`, resp.status);
          continue;
        }
        return (await resp.json()) as T;
      } catch (err) {
        if (err instanceof ApiError && err.status !== undefined && err.status < 500) throw err;
        lastError = err;
      }
    }
    throw lastError instanceof Error ? lastError : new ApiError(String(lastError));
  }

  async createSession(participantLabel: string, mode: Mode): Promise<SessionInfo> {
    const info = await this.request<SessionInfo>("POST", "/api/session", {
      participant_label: participantLabel,
      mode,
    });
    this.token = info.token;
    return info;
  }

  async nextItem(): Promise<ItemPayload | null> {
    const payload = await this.request<NextResponse>("GET", "/api/item/next");
    if (payload.exhausted) return null;
    return payload as ItemPayload;
  }

  async submitAnswer(pairId: string, letter: string): Promise<AnswerAck> {
    return this.request<AnswerAck>("POST", `/api/item/${pairId}/answer`, {
      letter,
      submission_id: newSubmissionId(),
    });
  }

  async submitVet(pairId: string, decision: VetDecision, reason: VetReason | null, note = ""): Promise<AnswerAck> {
    return this.request<AnswerAck>("POST", `/api/item/${pairId}/vet`, {
      decision,
      reason,
      note,
      submission_id: newSubmissionId(),
    });
  }

  async stats(): Promise<unknown> {
    return this.request("GET", "/api/stats");
  }
}
