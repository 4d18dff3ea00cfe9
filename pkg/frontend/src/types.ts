export type Mode = "study" | "vet";

export interface SessionInfo {
  token: string;
  mode: Mode;
}

export interface ItemPayload {
  pair_id: string;
  images: [string, string];
  letters: string[];
  num_labels: number;
  progress: { done: number; total: number };
  mode: Mode;
  // vet mode only: the service reveals which letter marks the edit
  correct_letter?: string;
  variant?: string;
}

export interface NextResponse extends Partial<ItemPayload> {
  exhausted?: boolean;
}

export interface AnswerAck {
  recorded: boolean;
  duplicate: boolean;
}

export type VetDecision = "accept" | "reject";

export const VET_REASONS = ["inpaint_artifact", "ambiguous", "object_too_small", "other"] as const;
export type VetReason = (typeof VET_REASONS)[number];
