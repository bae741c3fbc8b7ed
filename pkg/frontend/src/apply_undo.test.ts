import { describe, expect, it } from "vitest";

import { applyCounterfactual, StaleCardError } from "./apply";
import { FieldStateForm } from "./form";
import { loadFixture } from "./fixtures";
import { CounterfactualSet, Features, Meta } from "./types";

const meta = loadFixture<Meta>("meta.json");
const field = loadFixture<{ features: Features }>("field_state.json");
const cfSet = loadFixture<CounterfactualSet>("counterfactuals.json");

function freshForm(): FieldStateForm {
  return new FieldStateForm(meta, field.features);
}

describe("apply counterfactual", () => {
  it("only the card's changed features differ afterwards", () => {
    const form = freshForm();
    const card = cfSet.items[0];
    applyCounterfactual(form, card);
    for (const name of meta.feature_order) {
      if (card.changed.includes(name)) {
        expect(form.get(name)).toBe(card.features[name]);
        expect(form.get(name)).not.toBe(field.features[name]);
      } else {
        expect(form.get(name)).toBe(field.features[name]);
      }
    }
  });

  it("apply then undo restores the original state exactly", () => {
    const form = freshForm();
    const original = form.snapshot();
    applyCounterfactual(form, cfSet.items[0]);
    expect(form.equals(original)).toBe(false);
    expect(form.undo()).toBe(true);
    expect(form.equals(original)).toBe(true);
    expect(form.snapshot()).toEqual(original);
  });

  it("undo and redo are strict inverses", () => {
    const form = freshForm();
    applyCounterfactual(form, cfSet.items[0]);
    const applied = form.snapshot();
    form.undo();
    expect(form.redo()).toBe(true);
    expect(form.snapshot()).toEqual(applied);
    form.undo();
    expect(form.snapshot()).toEqual(field.features);
  });

  it("rejects a stale card whose schema no longer matches", () => {
    const form = freshForm();
    const stale = {
      ...cfSet.items[0],
      features: { ...cfSet.items[0].features, retired_feature: 1.0 },
    };
    expect(() => applyCounterfactual(form, stale)).toThrow(StaleCardError);
  });

  it("rejects a card changing an unknown feature", () => {
    const form = freshForm();
    const { retired: _omit, ...rest } = { retired: 0, ...cfSet.items[0].features };
    const stale = {
      ...cfSet.items[0],
      features: rest,
      changed: ["no_such_feature"],
    };
    expect(() => applyCounterfactual(form, stale)).toThrow(StaleCardError);
  });
});

describe("form state", () => {
  it("payload round-trip is lossless for every feature type", () => {
    const form = freshForm();
    expect(form.toPayload().features).toEqual(field.features);
  });

  it("lock toggles mirror the service immutables", () => {
    const form = freshForm();
    for (const name of meta.feature_order) {
      expect(form.locked(name)).toBe(meta.features[name].immutable);
      expect(meta.immutable.includes(name)).toBe(meta.features[name].immutable);
    }
  });

  it("validates categorical levels against the schema", () => {
    const form = freshForm();
    expect(() => form.update({ V: "organic" })).toThrow();
    form.update({ V: "bt" });
    expect(form.get("V")).toBe("bt");
  });

  it("validates numerics against the schema", () => {
    const form = freshForm();
    expect(() => form.update({ SW: "wet" })).toThrow();
    form.update({ SW: "0.25" });
    expect(form.get("SW")).toBe(0.25);
  });
});
