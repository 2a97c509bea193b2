/** Command line: render one figure from one CLI artifact.
 *
 *   plot <kind> <input.csv> <output.svg> [--shape NX,NY,NZ]
 *
 * kinds: volume | phi | composition | gamma | distance | residual
 * (residual requires --shape, the fine-grid shape of the solve run).
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";

import { readArtifact, SchemaError } from "./csv.js";
import {
  compositionPlot,
  distancePlot,
  gammaPlot,
  phiPlot,
  residualPlot,
  volumePlot,
} from "./plots.js";

const USAGE =
  "usage: plot <volume|phi|composition|gamma|distance|residual> " +
  "<input.csv> <output.svg> [--shape NX,NY,NZ]";

export function run(argv: string[]): number {
  const args = [...argv];
  let shape: [number, number, number] | undefined;
  const si = args.indexOf("--shape");
  if (si >= 0) {
    const spec = args[si + 1];
    const parts = (spec ?? "").split(",").map(Number);
    if (parts.length !== 3 || parts.some((v) => !Number.isInteger(v) || v <= 0)) {
      console.error(`invalid --shape ${JSON.stringify(spec)}; expected NX,NY,NZ`);
      return 1;
    }
    shape = parts as [number, number, number];
    args.splice(si, 2);
  }
  const [kind, input, output] = args;
  if (!kind || !input || !output) {
    console.error(USAGE);
    return 1;
  }
  try {
    const artifact = readArtifact(input);
    let svg: string;
    switch (kind) {
      case "volume":
        svg = volumePlot(artifact, input);
        break;
      case "phi":
        svg = phiPlot(artifact, input);
        break;
      case "composition":
        svg = compositionPlot(artifact, input);
        break;
      case "gamma":
        svg = gammaPlot(artifact, input);
        break;
      case "distance":
        svg = distancePlot(artifact, input);
        break;
      case "residual":
        if (!shape) {
          console.error("residual plots need --shape NX,NY,NZ");
          return 1;
        }
        svg = residualPlot(artifact, shape, input);
        break;
      default:
        console.error(`unknown figure kind "${kind}"\n${USAGE}`);
        return 1;
    }
    mkdirSync(dirname(output), { recursive: true });
    writeFileSync(output, svg, "utf-8");
    console.log(`${kind}: ${input} -> ${output}`);
    return 0;
  } catch (err) {
    if (err instanceof SchemaError || err instanceof RangeError) {
      console.error(String(err.message ?? err));
      return 1;
    }
    if (err instanceof Error && "code" in err) {
      console.error(err.message); // file system errors
      return 1;
    }
    throw err;
  }
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(run(process.argv.slice(2)));
}
