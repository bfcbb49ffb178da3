export interface SearchResultItem {
  object_id: string;
  score: number;
  rank: number;
  image_url: string;
  model_download_url: string;
  description: string | null;
}

export interface SearchResponse {
  api_version: string;
  results: SearchResultItem[];
  elapsed_ms: number;
}

export interface DescriptionInfo {
  object_id: string;
  kind: string;
  text: string;
  token_count: number;
  backend_id: string;
  created_at: string;
  truncated: boolean;
}

export interface ObjectRecordInfo {
  object_id: string;
  image_ref: string;
  model_ref: string;
  category: string;
  display_name?: string;
}

export interface ObjectDetail {
  api_version: string;
  record: ObjectRecordInfo;
  descriptions: DescriptionInfo[];
  image_url: string;
  model_download_url: string;
}

/** The surface the UI needs from the backend; stubbed in tests. */
export interface SearchApi {
  search(query: string, k: number, visualFocus: number, signal?: AbortSignal): Promise<SearchResponse>;
  similar(objectId: string, k: number, signal?: AbortSignal): Promise<SearchResponse>;
  objectDetail(objectId: string): Promise<ObjectDetail>;
}
