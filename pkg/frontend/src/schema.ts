/** Column schemas for each CLI artifact kind.
 *
 * A schema validates the per-row record shape with zod and names any
 * missing or malformed column in the error; extra columns are rejected
 * so that silent producer-side schema drift is caught here.
 */

import { z } from "zod";

import { RawArtifact, SchemaError } from "./csv.js";

const num = z.number().finite();
// derived-ratio columns may legitimately carry NaN (e.g. undefined
// doubling at the largest radius, pole-precondition failures)
const numOrNan = z.union([z.number(), z.nan()]);

export const distanceRow = z
  .object({
    x1: num, x2: num, x3: num,
    y1: num, y2: num, y3: num,
    d_fast: num.nonnegative(),
    d_upper: num.nonnegative(),
  })
  .strict();

export const volumeRow = z
  .object({
    radius: num.positive(),
    volume: num.positive(),
    stderr: num.nonnegative(),
    doubling_ratio: numOrNan,
    formula_value: num.nonnegative(),
    mc_over_formula: numOrNan,
  })
  .strict();

export const phiRow = z
  .object({
    d: num.positive(),
    beta: num.positive(),
    phi: num.nonnegative(),
  })
  .strict();

export const phiCompositionRow = z
  .object({
    x1: num, x2: num, x3: num,
    z1: num, z2: num, z3: num,
    beta: num.positive(),
    gamma: num.positive(),
    lhs: num,
    rhs: numOrNan,
    ratio: numOrNan,
  })
  .strict();

export const gammaRow = z
  .object({
    x1: num, x2: num, x3: num,
    y1: num, y2: num, y3: num,
    d_fast: num.positive(),
    P: num,
    phi_prime: num,
    gamma: num,
  })
  .strict();

export const solveRow = z
  .object({
    node: num.int().nonnegative(),
    w: num,
    Lw: num,
    f: num,
    residual: num.nonnegative(),
  })
  .strict();

export type DistanceRow = z.infer<typeof distanceRow>;
export type VolumeRow = z.infer<typeof volumeRow>;
export type PhiRow = z.infer<typeof phiRow>;
export type PhiCompositionRow = z.infer<typeof phiCompositionRow>;
export type GammaRow = z.infer<typeof gammaRow>;
export type SolveRow = z.infer<typeof solveRow>;

export const SCHEMAS = {
  distance: distanceRow,
  volume: volumeRow,
  phi: phiRow,
  composition: phiCompositionRow,
  gamma: gammaRow,
  solve: solveRow,
} as const;

export type ArtifactKind = keyof typeof SCHEMAS;

export function validateRows<K extends ArtifactKind>(
  kind: K,
  artifact: RawArtifact,
  path = "<artifact>",
): z.infer<(typeof SCHEMAS)[K]>[] {
  const schema = SCHEMAS[kind];
  return artifact.rows.map((row, i) => {
    const res = schema.safeParse(row);
    if (!res.success) {
      const issue = res.error.issues[0]!;
      throw new SchemaError(
        `${path}: row ${i + 1}: column "${issue.path.join(".")}": ` +
          issue.message,
      );
    }
    return res.data as z.infer<(typeof SCHEMAS)[K]>;
  });
}
