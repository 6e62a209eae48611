/** Keyboard map: 1/j = similar, 0/k = not similar, u = undo. */

import { VoteLabel } from "./api.js";

export type KeyAction = { kind: "vote"; label: VoteLabel } | { kind: "undo" };

const BINDINGS: Record<string, KeyAction> = {
  "1": { kind: "vote", label: 1 },
  j: { kind: "vote", label: 1 },
  "0": { kind: "vote", label: 0 },
  k: { kind: "vote", label: 0 },
  u: { kind: "undo" },
};

/**
 * Translate a key press into a queue action, or null for unbound keys and
 * chorded presses (ctrl/alt/meta are left to the browser).
 */
export function actionForKey(key: string, modifiers?: { ctrl?: boolean; alt?: boolean; meta?: boolean }): KeyAction | null {
  if (modifiers && (modifiers.ctrl || modifiers.alt || modifiers.meta)) return null;
  return BINDINGS[key.toLowerCase()] ?? null;
}
