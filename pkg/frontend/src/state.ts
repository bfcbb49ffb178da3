import { ObjectDetail, SearchResultItem } from "./types.js";

export const K_MIN = 1;
export const K_MAX = 10;
export const DEFAULT_K = 8;
export const DEFAULT_VISUAL_FOCUS = 0.5;

export type ConversationEntry =
  | { kind: "user"; text: string }
  | { kind: "suggestions"; query: string; results: SearchResultItem[] };

export interface UiSearchState {
  prompt: string;
  k: number;
  visualFocus: number;
  /** Append-only within a session. */
  conversation: ConversationEntry[];
  selected: ObjectDetail | null;
  /** Set when a detail fetch came back 404; renders a not-found card. */
  missingObject: string | null;
  showDescription: boolean;
  busy: boolean;
  error: string | null;
}

export function initialState(): UiSearchState {
  return {
    prompt: "",
    k: DEFAULT_K,
    visualFocus: DEFAULT_VISUAL_FOCUS,
    conversation: [],
    selected: null,
    missingObject: null,
    showDescription: false,
    busy: false,
    error: null,
  };
}

/** Result-count slider values are integers clamped to [1, 10]. */
export function clampK(value: number): number {
  if (!Number.isFinite(value)) return DEFAULT_K;
  return Math.min(K_MAX, Math.max(K_MIN, Math.round(value)));
}

/** Visual-focus slider values are clamped to [0, 1]. */
export function clampVisualFocus(value: number): number {
  if (!Number.isFinite(value)) return DEFAULT_VISUAL_FOCUS;
  return Math.min(1, Math.max(0, value));
}

/** The pre-filled placeholder is a hint, never a submission. A non-empty
 * prompt may be submitted even while a search is pending: the new request
 * cancels the old one. */
export function canSubmit(state: UiSearchState): boolean {
  return state.prompt.trim().length > 0;
}

export function appendConversation(
  state: UiSearchState,
  entry: ConversationEntry,
): UiSearchState {
  return { ...state, conversation: [...state.conversation, entry] };
}

/** "image 10% / text 90%" for a focus value of 0.1. */
export function focusLabel(visualFocus: number): string {
  const image = Math.round(visualFocus * 100);
  return `image ${image}% / text ${100 - image}%`;
}
