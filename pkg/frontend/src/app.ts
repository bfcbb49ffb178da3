import { SearchController } from "./controller.js";
import {
  renderConversation,
  renderDetail,
  renderError,
  renderFocusLabel,
  renderNotFound,
} from "./render.js";
import { UiSearchState } from "./state.js";
import { SearchApi } from "./types.js";

interface Elements {
  conversation: HTMLElement;
  prompt: HTMLInputElement;
  searchButton: HTMLButtonElement;
  kSlider: HTMLInputElement;
  kValue: HTMLElement;
  focusSlider: HTMLInputElement;
  focusValue: HTMLElement;
  detail: HTMLElement;
  errorBar: HTMLElement;
}

function grab(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el;
}

/** Wires DOM events to the controller and re-renders on every state change. */
export function mountApp(api: SearchApi, root: Document = document): SearchController {
  const els: Elements = {
    conversation: grab("conversation"),
    prompt: grab("prompt-input") as HTMLInputElement,
    searchButton: grab("search-button") as HTMLButtonElement,
    kSlider: grab("k-slider") as HTMLInputElement,
    kValue: grab("k-value"),
    focusSlider: grab("focus-slider") as HTMLInputElement,
    focusValue: grab("focus-value"),
    detail: grab("detail-panel"),
    errorBar: grab("error-bar"),
  };

  const controller = new SearchController(api, (state) => render(state));

  function render(state: UiSearchState): void {
    els.conversation.innerHTML = renderConversation(state);
    els.conversation.scrollTop = els.conversation.scrollHeight;
    els.kValue.textContent = String(state.k);
    els.focusValue.textContent = renderFocusLabel(state.visualFocus);
    els.searchButton.disabled = state.prompt.trim().length === 0;
    if (els.prompt.value !== state.prompt) els.prompt.value = state.prompt;
    els.detail.innerHTML = state.selected
      ? renderDetail(state.selected, state.showDescription)
      : state.missingObject
        ? renderNotFound(state.missingObject)
        : "";
    els.detail.classList.toggle("open",
      state.selected !== null || state.missingObject !== null);
    els.errorBar.innerHTML = state.error ? renderError(state.error) : "";
  }

  els.prompt.addEventListener("input", () => controller.setPrompt(els.prompt.value));
  els.prompt.addEventListener("keydown", (event) => {
    if (event.key === "Enter") void controller.submitSearch();
  });
  els.searchButton.addEventListener("click", () => void controller.submitSearch());
  els.kSlider.addEventListener("input", () => controller.setK(Number(els.kSlider.value)));
  els.focusSlider.addEventListener("input", () =>
    controller.setVisualFocus(Number(els.focusSlider.value)));

  els.conversation.addEventListener("click", (event) => {
    const card = (event.target as HTMLElement).closest<HTMLElement>(".result-card");
    if (card?.dataset.objectId) void controller.openDetail(card.dataset.objectId);
  });

  els.detail.addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
    if (!target) return;
    const action = target.dataset.action;
    if (action === "close") controller.closeDetail();
    else if (action === "toggle-description") controller.toggleDescription();
    else if (action === "search-similar" && target.dataset.objectId) {
      controller.closeDetail();
      void controller.searchSimilar(target.dataset.objectId);
    }
  });

  els.errorBar.addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
    if (target?.dataset.action === "retry") void controller.retry();
  });

  render(controller.state);
  return controller;
}
