/** Advisor console wiring: form edits re-predict (latest-wins), advice cards
 * apply into the form and immediately re-predict, undo walks the loop back.
 * The API base URL comes from the page's data-api-base attribute (build-time
 * default "") so the same bundle can sit behind any reverse proxy. */

import { ApiClient } from "./api";
import { applyCounterfactual } from "./apply";
import { FieldStateForm } from "./form";
import { buildAdviceView, buildCateView, buildEvaluationView } from "./viewmodel";
import {
  renderAdvice,
  renderCate,
  renderError,
  renderEvaluation,
  renderForm,
} from "./render";
import { CounterfactualSet, Features } from "./types";

async function boot(): Promise<void> {
  const baseUrl = document.body.dataset.apiBase ?? "";
  const api = new ApiClient(baseUrl);
  const formRoot = document.getElementById("form")!;
  const adviceRoot = document.getElementById("advice")!;
  const evalRoot = document.getElementById("evaluation")!;
  const cateRoot = document.getElementById("cate")!;
  const undoButton = document.getElementById("undo") as HTMLButtonElement;

  const meta = await api.meta();
  const initial: Features = {};
  for (const name of meta.feature_order) {
    const fm = meta.features[name];
    initial[name] = fm.kind === "categorical" ? (fm.levels?.[0] ?? "") :
      fm.bounds ? (fm.bounds[0] + fm.bounds[1]) / 2 : 0;
  }
  const form = new FieldStateForm(meta, initial);
  let lastCfSet: CounterfactualSet | null = null;

  async function refresh(): Promise<void> {
    try {
      const payload = form.toPayload();
      const predict = await api.predict(payload.features);
      if (predict === null) return; // superseded by a newer edit
      lastCfSet = null;
      if (predict.predicted_class === 1) {
        try {
          lastCfSet = await api.counterfactuals(payload.features, 3);
        } catch {
          lastCfSet = null; // advice is optional; prediction still renders
        }
      }
      const view = buildAdviceView(predict, payload.features, lastCfSet, meta.threshold);
      renderAdvice(adviceRoot, view, (cardIndex) => {
        if (!lastCfSet) return;
        applyCounterfactual(form, lastCfSet.items[cardIndex]);
        renderForm(formRoot, form, onEdit);
        undoButton.disabled = !form.canUndo;
        void refresh();
      });
    } catch (err) {
      renderError(adviceRoot, String(err), () => void refresh());
    }
  }

  function onEdit(name: string, value: string): void {
    form.update({ [name]: value });
    undoButton.disabled = !form.canUndo;
    void refresh();
  }

  renderForm(formRoot, form, onEdit);
  undoButton.addEventListener("click", () => {
    if (form.undo()) {
      renderForm(formRoot, form, onEdit);
      undoButton.disabled = !form.canUndo;
      void refresh();
    }
  });
  void refresh();

  try {
    renderEvaluation(evalRoot, buildEvaluationView(await api.evaluationDid()));
  } catch {
    evalRoot.textContent = "no evaluation has been run yet; " +
      "run the evaluate-did stage and restart the service";
  }

  const cateButton = document.getElementById("cate-run") as HTMLButtonElement | null;
  cateButton?.addEventListener("click", async () => {
    const inputs = cateRoot.querySelectorAll<HTMLInputElement>("input[data-covariate]");
    const covariates: Record<string, number> = {};
    inputs.forEach((input) => {
      covariates[input.dataset.covariate!] = Number(input.value);
    });
    try {
      renderCate(cateRoot, buildCateView(await api.cate(covariates)));
    } catch (err) {
      renderError(cateRoot, String(err), () => cateButton.click());
    }
  });
}

document.addEventListener("DOMContentLoaded", () => void boot());
