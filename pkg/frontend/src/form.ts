/** Field-state form: one control per feature from /meta, lock toggles
 * mirroring the service's immutables, and an undo/redo history whose
 * operations are strict inverses. */

import { FeatureValue, Features, Meta } from "./types";

export class FormError extends Error {}

export class FieldStateForm {
  readonly meta: Meta;
  private values: Features;
  private undoStack: Features[] = [];
  private redoStack: Features[] = [];

  constructor(meta: Meta, initial: Features) {
    this.meta = meta;
    for (const name of meta.feature_order) {
      if (!(name in initial)) {
        throw new FormError(`initial state is missing feature ${name}`);
      }
    }
    this.values = { ...initial };
  }

  get(name: string): FeatureValue {
    if (!(name in this.values)) throw new FormError(`unknown feature ${name}`);
    return this.values[name];
  }

  locked(name: string): boolean {
    return this.meta.features[name]?.immutable ?? true;
  }

  /** Validate a single value against the /meta schema. */
  validate(name: string, value: FeatureValue): FeatureValue {
    const fm = this.meta.features[name];
    if (!fm) throw new FormError(`unknown feature ${name}`);
    if (fm.kind === "categorical") {
      const level = String(value);
      if (fm.levels && !fm.levels.includes(level)) {
        throw new FormError(`invalid level ${level} for ${name}`);
      }
      return level;
    }
    const num = Number(value);
    if (!Number.isFinite(num)) throw new FormError(`${name} must be numeric`);
    return num;
  }

  /** Apply a batch of edits as ONE undoable step. */
  update(edits: Features): void {
    const cleaned: Features = {};
    for (const [name, value] of Object.entries(edits)) {
      cleaned[name] = this.validate(name, value);
    }
    this.undoStack.push({ ...this.values });
    this.redoStack = [];
    this.values = { ...this.values, ...cleaned };
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (prev === undefined) return false;
    this.redoStack.push({ ...this.values });
    this.values = prev;
    return true;
  }

  redo(): boolean {
    const next = this.redoStack.pop();
    if (next === undefined) return false;
    this.undoStack.push({ ...this.values });
    this.values = next;
    return true;
  }

  get canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  /** Lossless request payload: exactly the feature values, nothing recomputed. */
  toPayload(): { features: Features } {
    return { features: { ...this.values } };
  }

  snapshot(): Features {
    return { ...this.values };
  }

  equals(other: Features): boolean {
    const names = this.meta.feature_order;
    return names.every((n) => this.values[n] === other[n]);
  }
}
