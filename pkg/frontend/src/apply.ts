/** Applying a counterfactual card writes its feature vector into the form as
 * one undoable step; undo restores the pre-advice state exactly. A card is
 * stale when its feature names no longer match the live /meta schema. */

import { FieldStateForm, FormError } from "./form";
import { CounterfactualItem } from "./types";

export class StaleCardError extends Error {}

export function applyCounterfactual(form: FieldStateForm, card: CounterfactualItem): void {
  const known = new Set(form.meta.feature_order);
  const cardNames = Object.keys(card.features);
  if (cardNames.length !== known.size || cardNames.some((n) => !known.has(n))) {
    throw new StaleCardError("advice card no longer matches the feature schema");
  }
  const edits: Record<string, string | number> = {};
  for (const name of card.changed) {
    if (!known.has(name)) {
      throw new StaleCardError(`advice card changes unknown feature ${name}`);
    }
    edits[name] = card.features[name];
  }
  try {
    form.update(edits);
  } catch (err) {
    if (err instanceof FormError) {
      throw new StaleCardError(`advice card value rejected: ${err.message}`);
    }
    throw err;
  }
}
