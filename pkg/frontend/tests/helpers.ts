import { ObjectDetail, SearchApi, SearchResponse, SearchResultItem } from "../src/types.js";

export function makeResults(n: number, prefix = "chair"): SearchResultItem[] {
  return Array.from({ length: n }, (_, i) => ({
    object_id: `${prefix}-${String(i).padStart(3, "0")}`,
    score: 1 - i * 0.05,
    rank: i + 1,
    image_url: `https://assets.test/renders/${prefix}-${i}.png`,
    model_download_url: `https://assets.test/models/${prefix}-${i}.obj`,
    description: `A ${prefix} numbered ${i}.`,
  }));
}

export function makeResponse(n: number, prefix = "chair"): SearchResponse {
  return { api_version: "1", results: makeResults(n, prefix), elapsed_ms: 3.2 };
}

export function makeDetail(objectId: string, description: string): ObjectDetail {
  return {
    api_version: "1",
    record: {
      object_id: objectId,
      image_ref: `renders/${objectId}.png`,
      model_ref: `models/${objectId}.obj`,
      category: "chair",
    },
    descriptions: [{
      object_id: objectId,
      kind: "template",
      text: description,
      token_count: description.split(/\s+/).length,
      backend_id: "stub",
      created_at: "2024-01-01T00:00:00+00:00",
      truncated: false,
    }],
    image_url: `https://assets.test/renders/${objectId}.png`,
    model_download_url: `https://assets.test/models/${objectId}.obj`,
  };
}

export interface RecordedCall {
  method: "search" | "similar" | "objectDetail";
  args: unknown[];
}

/** Scriptable SearchApi stub that records every call it receives. */
export class StubApi implements SearchApi {
  calls: RecordedCall[] = [];
  searchResponse: SearchResponse = makeResponse(8);
  similarResponse: SearchResponse = makeResponse(5, "similar");
  detailResponse: ObjectDetail = makeDetail("chair-000", "A stub chair.");
  failWith: Error | null = null;
  hang = false;

  private respond<T>(value: T, signal?: AbortSignal): Promise<T> {
    if (this.failWith) return Promise.reject(this.failWith);
    if (this.hang) {
      return new Promise<T>((_resolve, reject) => {
        signal?.addEventListener("abort", () =>
          reject(new DOMException("aborted", "AbortError")));
      });
    }
    return Promise.resolve(value);
  }

  search(query: string, k: number, visualFocus: number, signal?: AbortSignal) {
    this.calls.push({ method: "search", args: [query, k, visualFocus] });
    return this.respond(this.searchResponse, signal);
  }

  similar(objectId: string, k: number, signal?: AbortSignal) {
    this.calls.push({ method: "similar", args: [objectId, k] });
    return this.respond(this.similarResponse, signal);
  }

  objectDetail(objectId: string) {
    this.calls.push({ method: "objectDetail", args: [objectId] });
    return this.respond(this.detailResponse);
  }
}
