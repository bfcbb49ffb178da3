import { ApiError } from "./api.js";
import {
  UiSearchState,
  appendConversation,
  canSubmit,
  clampK,
  clampVisualFocus,
  initialState,
} from "./state.js";
import { SearchApi } from "./types.js";

type Listener = (state: UiSearchState) => void;

/** Drives all state transitions; the DOM layer only forwards events here. */
export class SearchController {
  state: UiSearchState = initialState();
  private inflight: AbortController | null = null;
  private lastAction: (() => Promise<void>) | null = null;

  constructor(private api: SearchApi, private onChange: Listener = () => {}) {}

  private update(next: UiSearchState): void {
    this.state = next;
    this.onChange(next);
  }

  setPrompt(text: string): void {
    this.update({ ...this.state, prompt: text });
  }

  setK(value: number): void {
    this.update({ ...this.state, k: clampK(value) });
  }

  setVisualFocus(value: number): void {
    this.update({ ...this.state, visualFocus: clampVisualFocus(value) });
  }

  /** One search in flight at a time; a new submission cancels the pending one. */
  private beginRequest(): AbortSignal {
    this.inflight?.abort();
    this.inflight = new AbortController();
    return this.inflight.signal;
  }

  async submitSearch(): Promise<void> {
    if (!canSubmit(this.state)) return;
    const query = this.state.prompt.trim();
    this.lastAction = () => this.submitSearch();
    const signal = this.beginRequest();
    this.update({ ...this.state, busy: true, error: null });
    try {
      const response = await this.api.search(query, this.state.k, this.state.visualFocus, signal);
      let next = appendConversation(this.state, { kind: "user", text: query });
      next = appendConversation(next, {
        kind: "suggestions",
        query,
        results: response.results,
      });
      this.update({ ...next, busy: false, prompt: "" });
    } catch (err) {
      this.failRequest(err);
    }
  }

  /** Searches again using a result object as the query. */
  async searchSimilar(objectId: string): Promise<void> {
    this.lastAction = () => this.searchSimilar(objectId);
    const signal = this.beginRequest();
    this.update({ ...this.state, busy: true, error: null });
    try {
      const response = await this.api.similar(objectId, this.state.k, signal);
      let next = appendConversation(this.state, {
        kind: "user",
        text: `similar to ${objectId}`,
      });
      next = appendConversation(next, {
        kind: "suggestions",
        query: `similar:${objectId}`,
        results: response.results,
      });
      this.update({ ...next, busy: false });
    } catch (err) {
      this.failRequest(err);
    }
  }

  async openDetail(objectId: string): Promise<void> {
    try {
      const detail = await this.api.objectDetail(objectId);
      this.update({
        ...this.state, selected: detail, missingObject: null, showDescription: false,
      });
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.update({ ...this.state, selected: null, missingObject: objectId });
        return;
      }
      this.failRequest(err);
    }
  }

  closeDetail(): void {
    this.update({
      ...this.state, selected: null, missingObject: null, showDescription: false,
    });
  }

  toggleDescription(): void {
    this.update({ ...this.state, showDescription: !this.state.showDescription });
  }

  async retry(): Promise<void> {
    const action = this.lastAction;
    if (action) await action();
  }

  private failRequest(err: unknown): void {
    if (err instanceof DOMException && err.name === "AbortError") {
      return; // superseded by a newer request
    }
    const message = err instanceof ApiError
      ? `${err.message} (${err.code})`
      : err instanceof Error
        ? err.message
        : "request failed";
    // conversation stays untouched; the error renders inline with a retry
    this.update({ ...this.state, busy: false, error: message });
  }
}
