/** Minimal DOM rendering. Native inputs and buttons keep everything
 * keyboard-operable; every chart has a table fallback right next to it. */

import { AdviceView, CateView, EvaluationView } from "./viewmodel";
import { FieldStateForm } from "./form";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, attrs: Record<string, string> = {}, text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

export function renderForm(root: HTMLElement, form: FieldStateForm,
                           onEdit: (name: string, value: string) => void): void {
  root.replaceChildren();
  for (const name of form.meta.feature_order) {
    const fm = form.meta.features[name];
    const row = el("div", { class: "field-row" });
    const id = `field-${name}`;
    const label = el("label", { for: id }, name + (fm.immutable ? " (locked)" : ""));
    row.append(label);
    if (fm.kind === "categorical") {
      const select = el("select", { id });
      for (const level of fm.levels ?? []) {
        const opt = el("option", { value: level }, level);
        if (level === form.get(name)) opt.selected = true;
        select.append(opt);
      }
      select.disabled = fm.immutable;
      select.addEventListener("change", () => onEdit(name, select.value));
      row.append(select);
    } else {
      const attrs: Record<string, string> = {
        id, type: "number", value: String(form.get(name)),
      };
      if (fm.bounds) {
        attrs.min = String(fm.bounds[0]);
        attrs.max = String(fm.bounds[1]);
      }
      if (fm.step) attrs.step = String(fm.step);
      const input = el("input", attrs);
      input.disabled = fm.immutable;
      input.addEventListener("change", () => onEdit(name, input.value));
      row.append(input);
    }
    if (fm.note) row.append(el("small", { class: "note" }, fm.note));
    root.append(row);
  }
}

export function renderAdvice(root: HTMLElement, view: AdviceView,
                             onApply: (cardIndex: number) => void): void {
  root.replaceChildren();
  const gauge = el("div", { class: "gauge", role: "meter",
                            "aria-valuenow": view.gaugeText,
                            "aria-valuemin": "0", "aria-valuemax": "1" });
  gauge.append(el("strong", {}, view.gaugeText));
  gauge.append(el("span", {}, ` ${view.classLabel}`));
  root.append(gauge);

  const maxAbs = Math.max(...view.bars.map((b) => Math.abs(b.value)), 1e-9);
  const chart = el("div", { class: "bars", "aria-hidden": "true" });
  const table = el("table", { class: "bars-fallback" });
  table.append(el("caption", {}, "feature contributions (log-odds)"));
  const head = el("tr");
  head.append(el("th", {}, "feature"), el("th", {}, "contribution"));
  table.append(head);
  for (const bar of view.bars) {
    const row = el("div", { class: `bar ${bar.direction}` });
    const width = Math.round((Math.abs(bar.value) / maxAbs) * 100);
    const fill = el("span", { class: "fill", style: `width:${width}%` });
    row.append(el("span", { class: "bar-label" }, bar.name), fill,
               el("span", { class: "bar-value" }, bar.value.toFixed(3)));
    chart.append(row);
    const tr = el("tr");
    tr.append(el("td", {}, bar.name), el("td", {}, bar.value.toFixed(3)));
    table.append(tr);
  }
  root.append(chart, table);
  if (!view.sumCheckOk) {
    root.append(el("p", { class: "error" }, "contribution sum does not match the logit"));
  }

  const cards = el("div", { class: "cards" });
  for (const card of view.cards) {
    const box = el("div", { class: "card" });
    box.append(el("h4", {}, `option ${card.index + 1}`));
    const list = el("ul");
    for (const change of card.changes) {
      list.append(el("li", { class: "changed" }, `${change.name}: ${change.from} -> ${change.to}`));
    }
    box.append(list);
    box.append(el("p", {}, `risk after: ${card.probability.toFixed(3)}, effort: ${card.proximity.toFixed(2)}`));
    const button = el("button", { type: "button" }, "Apply");
    button.addEventListener("click", () => onApply(card.index));
    box.append(button);
    cards.append(box);
  }
  if (view.bestEffort) {
    cards.append(el("p", { class: "note" }, "best effort: fewer options than requested"));
  }
  root.append(cards);
}

export function renderEvaluation(root: HTMLElement, view: EvaluationView): void {
  root.replaceChildren();
  root.append(el("p", {},
    `ATT ${view.att} (95% CI ${view.ciLow} .. ${view.ciHigh}; SE ${view.se}; ` +
    `${view.nTreated} treated / ${view.nControl} control)`));
  const badge = el("span", { class: view.pretrendWarning ? "badge warn" : "badge ok" },
                   `pre-trend p = ${view.pretrendP}`);
  root.append(badge);
  const table = el("table");
  table.append(el("caption", {}, "per-zone effects"));
  const head = el("tr");
  head.append(el("th", {}, "zone"), el("th", {}, "att"),
              el("th", {}, "treated"), el("th", {}, "control"));
  table.append(head);
  for (const row of view.zoneRows) {
    const tr = el("tr");
    tr.append(el("td", {}, row.zone), el("td", {}, row.att),
              el("td", {}, String(row.nTreated)), el("td", {}, String(row.nControl)));
    table.append(tr);
  }
  root.append(table);
}

export function renderCate(root: HTMLElement, view: CateView): void {
  root.replaceChildren();
  root.append(el("p", {}, `estimated effect: ${view.effect} (${view.reading})`));
}

export function renderError(root: HTMLElement, message: string, onRetry: () => void): void {
  root.replaceChildren();
  const banner = el("div", { class: "banner error", role: "alert" }, message);
  const retry = el("button", { type: "button" }, "Retry");
  retry.addEventListener("click", onRetry);
  banner.append(retry);
  root.append(banner);
}
