import { ConversationEntry, UiSearchState, focusLabel } from "./state.js";
import { ObjectDetail, SearchResultItem } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function renderResultCard(item: SearchResultItem): string {
  const id = escapeHtml(item.object_id);
  return `<button class="result-card" data-object-id="${id}" title="${id}">
    <img class="result-image" src="${escapeHtml(item.image_url)}" alt="${id}" loading="lazy">
    <span class="result-meta">#${item.rank} · ${item.score.toFixed(3)}</span>
  </button>`;
}

/** Every card in a row comes from the one response that produced the row. */
export function renderSuggestionsRow(query: string, results: SearchResultItem[]): string {
  const cards = results.map(renderResultCard).join("");
  return `<div class="row row-system" data-query="${escapeHtml(query)}">
    <div class="row-author">system</div>
    <p class="row-note">Here are the suggestions</p>
    <div class="result-grid">${cards}</div>
  </div>`;
}

export function renderUserRow(text: string): string {
  return `<div class="row row-user">
    <div class="row-author">you</div>
    <p class="row-text">${escapeHtml(text)}</p>
  </div>`;
}

function renderEntry(entry: ConversationEntry): string {
  if (entry.kind === "user") {
    return renderUserRow(entry.text);
  }
  return renderSuggestionsRow(entry.query, entry.results);
}

/** Pure function of the state: same conversation, same markup. */
export function renderConversation(state: UiSearchState): string {
  if (state.conversation.length === 0) {
    return `<div class="empty-hint">
      <h1>shapesearch</h1>
      <p>Describe the 3D object you are looking for to explore the dataset.</p>
    </div>`;
  }
  return state.conversation.map(renderEntry).join("\n");
}

export function renderDetail(detail: ObjectDetail, showDescription: boolean): string {
  const id = escapeHtml(detail.record.object_id);
  const description = detail.descriptions[0]?.text ?? "";
  const descriptionBlock = showDescription
    ? `<p class="detail-description">${escapeHtml(description) || "No description stored."}</p>`
    : "";
  return `<div class="detail" data-object-id="${id}">
    <button class="detail-close" data-action="close">×</button>
    <img class="detail-image" src="${escapeHtml(detail.image_url)}" alt="${id}">
    <h2>${escapeHtml(detail.record.display_name || detail.record.object_id)}</h2>
    <div class="detail-actions">
      <button data-action="toggle-description">${showDescription ? "hide description" : "show description"}</button>
      <button data-action="search-similar" data-object-id="${id}">search similar</button>
      <a class="download" href="${escapeHtml(detail.model_download_url)}" download>download</a>
    </div>
    ${descriptionBlock}
  </div>`;
}

export function renderNotFound(objectId: string): string {
  return `<div class="detail detail-missing">
    <button class="detail-close" data-action="close">×</button>
    <p>Object ${escapeHtml(objectId)} was not found.</p>
  </div>`;
}

export function renderError(message: string): string {
  return `<div class="error-bar">
    <span>${escapeHtml(message)}</span>
    <button data-action="retry">retry</button>
  </div>`;
}

export function renderFocusLabel(visualFocus: number): string {
  return focusLabel(visualFocus);
}
