/** Dual forest plot rendered straight from the service's forest payload.
 * Pixel placement uses a log scale; every printed number is a payload value. */

import type { ForestPayload } from "./api";
import { fixed, ratioWithCi } from "./format";
import { el, svgEl } from "./dom";

interface ForestRow {
  label: string;
  point: number | null;
  low: number | null;
  high: number | null;
  pooled: boolean;
}

const WIDTH = 460;
const ROW_HEIGHT = 26;
const TOP_PAD = 12;
const BOTTOM_PAD = 34;
const LABEL_GUTTER = 150;
const VALUE_GUTTER = 128;
const TICK_CANDIDATES = [0.1, 0.25, 0.5, 1, 2, 4, 8];

function logScale(domain: [number, number]): (value: number) => number {
  const [low, high] = domain;
  const span = Math.log(high) - Math.log(low);
  const plotWidth = WIDTH - LABEL_GUTTER - VALUE_GUTTER;
  return (value) => LABEL_GUTTER + ((Math.log(value) - Math.log(low)) / span) * plotWidth;
}

function sharedDomain(forest: ForestPayload): [number, number] {
  const values: number[] = [];
  for (const study of forest.studies) {
    for (const v of [study.rr, study.ci_low, study.ci_high]) {
      if (v != null && Number.isFinite(v) && v > 0) {
        values.push(v);
      }
    }
  }
  for (const pooled of forest.pooled) {
    for (const v of [pooled.theta, pooled.ci_low, pooled.ci_high]) {
      if (Number.isFinite(v) && v > 0) {
        values.push(v);
      }
    }
  }
  if (values.length === 0) {
    return [0.1, 10];
  }
  let low = Math.min(...values, 1) * 0.9;
  let high = Math.max(...values, 1) * 1.1;
  if (high / low < 1.05) {
    low *= 0.8;
    high *= 1.25;
  }
  return [low, high];
}

function renderPanel(title: string, rows: ForestRow[], domain: [number, number]): HTMLElement {
  const x = logScale(domain);
  const height = TOP_PAD + rows.length * ROW_HEIGHT + BOTTOM_PAD;
  const svg = svgEl("svg", {
    viewBox: `0 0 ${WIDTH} ${height}`,
    width: String(WIDTH),
    height: String(height),
    role: "img",
    "aria-label": `${title} forest plot`,
  });

  const axisY = TOP_PAD + rows.length * ROW_HEIGHT + 8;
  if (domain[0] < 1 && domain[1] > 1) {
    svg.append(
      svgEl("line", {
        x1: String(x(1)),
        x2: String(x(1)),
        y1: String(TOP_PAD - 4),
        y2: String(axisY),
        class: "forest-null",
      }),
    );
  }

  rows.forEach((row, index) => {
    const midY = TOP_PAD + index * ROW_HEIGHT + ROW_HEIGHT / 2;
    const rowClass = row.pooled ? "forest-row pooled" : "forest-row";
    const group = svgEl("g", { class: rowClass, "data-row": row.label });
    group.append(
      svgEl(
        "text",
        { x: "6", y: String(midY + 4), class: "forest-label" },
        [row.label],
      ),
    );
    if (row.point != null && row.low != null && row.high != null && row.low > 0) {
      group.append(
        svgEl("line", {
          x1: String(x(row.low)),
          x2: String(x(row.high)),
          y1: String(midY),
          y2: String(midY),
          class: "forest-ci",
        }),
      );
      if (row.pooled) {
        group.append(
          svgEl("rect", {
            x: String(x(row.point) - 5),
            y: String(midY - 5),
            width: "10",
            height: "10",
            transform: `rotate(45 ${x(row.point)} ${midY})`,
            class: "forest-pooled-marker",
          }),
        );
      } else {
        group.append(
          svgEl("circle", {
            cx: String(x(row.point)),
            cy: String(midY),
            r: "4",
            class: "forest-point",
          }),
        );
      }
    }
    group.append(
      svgEl(
        "text",
        {
          x: String(WIDTH - 6),
          y: String(midY + 4),
          "text-anchor": "end",
          class: "forest-value",
          "data-testid": `forest-value-${title}-${row.label}`,
        },
        [ratioWithCi(row.point, row.low, row.high)],
      ),
    );
    svg.append(group);
  });

  svg.append(
    svgEl("line", {
      x1: String(LABEL_GUTTER),
      x2: String(WIDTH - VALUE_GUTTER),
      y1: String(axisY),
      y2: String(axisY),
      class: "forest-axis",
    }),
  );
  for (const tick of TICK_CANDIDATES) {
    if (tick < domain[0] || tick > domain[1]) {
      continue;
    }
    svg.append(
      svgEl("line", {
        x1: String(x(tick)),
        x2: String(x(tick)),
        y1: String(axisY),
        y2: String(axisY + 4),
        class: "forest-axis",
      }),
      svgEl(
        "text",
        {
          x: String(x(tick)),
          y: String(axisY + 16),
          "text-anchor": "middle",
          class: "forest-tick",
        },
        [String(tick)],
      ),
    );
  }

  const panel = el("figure", { class: "forest-panel", "data-testid": `forest-panel-${title}` });
  panel.append(el("figcaption", {}, [title]));
  panel.append(svg);
  return panel;
}

/** Two panels side by side: classical weighting left, eligibility weighting
 * right, per-study rows in payload order with the pooled row beneath. */
export function renderForest(forest: ForestPayload): HTMLElement {
  const domain = sharedDomain(forest);
  const container = el("div", { class: "forest", "data-testid": "forest" });
  forest.pooled.forEach((pooled, side) => {
    const rows: ForestRow[] = forest.studies.map((study) => {
      const percent =
        side === 0 ? study.classical_weight_percent : study.weighted_weight_percent;
      return {
        label: `${study.study_id} · ${fixed(percent, 1)}%`,
        point: study.rr,
        low: study.ci_low,
        high: study.ci_high,
        pooled: false,
      };
    });
    rows.push({
      label: pooled.label,
      point: pooled.theta,
      low: pooled.ci_low,
      high: pooled.ci_high,
      pooled: true,
    });
    container.append(renderPanel(pooled.label, rows, domain));
  });
  return container;
}
