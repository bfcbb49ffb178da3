import { ObjectDetail, SearchApi, SearchResponse } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
  }
}

type Transport = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin JSON client over the retrieval service endpoints. */
export class ApiClient implements SearchApi {
  constructor(
    private baseUrl: string = "",
    private transport: Transport = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.transport(this.baseUrl + path, init);
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      // non-JSON error bodies fall through to the status check
    }
    if (!response.ok) {
      const err = (body as { error?: { code?: string; message?: string } } | null)?.error;
      throw new ApiError(
        response.status,
        err?.code ?? "http_error",
        err?.message ?? `request failed with status ${response.status}`,
      );
    }
    return body as T;
  }

  search(query: string, k: number, visualFocus: number, signal?: AbortSignal): Promise<SearchResponse> {
    return this.request<SearchResponse>("/api/search", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ query, k, visual_focus: visualFocus }),
      signal,
    });
  }

  similar(objectId: string, k: number, signal?: AbortSignal): Promise<SearchResponse> {
    const id = encodeURIComponent(objectId);
    return this.request<SearchResponse>(`/api/similar/${id}?k=${k}`, { signal });
  }

  objectDetail(objectId: string): Promise<ObjectDetail> {
    const id = encodeURIComponent(objectId);
    return this.request<ObjectDetail>(`/api/objects/${id}`);
  }
}
