import { ApiClient } from "./api.js";
import { mountApp } from "./app.js";

declare global {
  interface Window {
    SHAPESEARCH_API_BASE?: string;
  }
}

const baseUrl = window.SHAPESEARCH_API_BASE ?? "";
mountApp(new ApiClient(baseUrl));
