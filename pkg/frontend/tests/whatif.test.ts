/** What-if screen against recorded service payloads. The displayed-number
 * assertions always compare the DOM with the payload the fetch double served,
 * so any client-side recomputation would fail here. */

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import type { MetaPayload, WeightVectorPayload } from "../src/api";
import { fixed, ratioWithCi } from "../src/format";
import { WhatIfScreen } from "../src/views/whatif";
import {
  createDeferredFetch,
  createFixtureFetch,
  text,
  waitFor,
  type RecordedCall,
} from "./helpers";

function lastPayload<T>(served: RecordedCall[], pathSuffix: string): T {
  const matches = served.filter((call) => call.path.endsWith(pathSuffix));
  if (matches.length === 0) {
    throw new Error(`nothing served for ${pathSuffix}`);
  }
  return matches[matches.length - 1].payload as T;
}

function mountWithFixtures() {
  const { fetch, served } = createFixtureFetch();
  const client = new ApiClient("", fetch);
  const screen = new WhatIfScreen({ client, runId: "olaparib-demo", debounceMs: 0 });
  document.body.append(screen.element);
  return { screen, served };
}

function setControl(testId: string, value: string): void {
  const input = document.querySelector<HTMLInputElement>(`[data-testid="${testId}"]`);
  if (!input) {
    throw new Error(`missing control ${testId}`);
  }
  input.value = value;
  input.dispatchEvent(new Event("input", { bubbles: true }));
}

beforeEach(() => {
  document.body.innerHTML = "";
});

describe("what-if screen on the bundled demo run", () => {
  it("shows the pooled pair (2.18, 1.97) at the defaults", async () => {
    const { screen, served } = mountWithFixtures();
    await screen.whenIdle();

    const meta = lastPayload<MetaPayload>(served, "/meta");
    const classicalText = text('[data-testid="pooled-classical"]');
    const weightedText = text('[data-testid="pooled-weighted"]');

    expect(classicalText).toBe(
      ratioWithCi(meta.classical.theta_hat, meta.classical.ci_low, meta.classical.ci_high),
    );
    expect(weightedText).toBe(
      ratioWithCi(meta.weighted.theta_hat, meta.weighted.ci_low, meta.weighted.ci_high),
    );
    expect(classicalText.startsWith("2.18")).toBe(true);
    expect(weightedText.startsWith("1.97")).toBe(true);
    expect(text('[data-testid="whatif-error"]')).toBe("");
  });

  it("renders every weight-table cell from the weights payload", async () => {
    const { screen, served } = mountWithFixtures();
    await screen.whenIdle();

    const vector = lastPayload<WeightVectorPayload>(served, "/weights");
    expect(vector.studies.length).toBeGreaterThan(0);
    for (const row of vector.studies) {
      const dom = document.querySelector(`[data-testid="weight-row-${row.study_id}"]`);
      expect(dom, `row for ${row.study_id}`).not.toBeNull();
      const cells = dom!.querySelectorAll("td");
      expect(cells[0].textContent).toBe(row.study_id);
      expect(cells[1].textContent).toBe(fixed(row.penalty, 2));
      expect(cells[2].textContent).toBe(fixed(row.compatibility, 4));
      expect(cells[3].textContent).toBe(fixed(row.score, 2));
      expect(cells[4].textContent).toBe(fixed(row.weight, 4));
    }
    expect(text('[data-testid="whatif-status"]')).toBe(
      `γ=${fixed(vector.gamma, 2)}, B=${fixed(vector.floor, 0)}, ` +
        `${vector.pmax_mode} pmax=${fixed(vector.pmax, 2)}`,
    );
  });

  it("renders both forest panels from the forest payload, pooled rows included", async () => {
    const { screen, served } = mountWithFixtures();
    await screen.whenIdle();

    const meta = lastPayload<MetaPayload>(served, "/meta");
    expect(meta.forest.pooled.map((p) => p.label)).toEqual([
      "classical",
      "eligibility-weighted",
    ]);
    for (const [side, pooled] of meta.forest.pooled.entries()) {
      const panel = document.querySelector(`[data-testid="forest-panel-${pooled.label}"]`);
      expect(panel, `panel ${pooled.label}`).not.toBeNull();
      const values = [...panel!.querySelectorAll(".forest-value")].map(
        (node) => node.textContent,
      );
      const expected = meta.forest.studies.map((study) =>
        ratioWithCi(study.rr, study.ci_low, study.ci_high),
      );
      expected.push(ratioWithCi(pooled.theta, pooled.ci_low, pooled.ci_high));
      expect(values).toEqual(expected);

      const labels = [...panel!.querySelectorAll(".forest-label")].map(
        (node) => node.textContent,
      );
      const expectedLabels = meta.forest.studies.map((study) => {
        const percent =
          side === 0 ? study.classical_weight_percent : study.weighted_weight_percent;
        return `${study.study_id} · ${fixed(percent, 1)}%`;
      });
      expectedLabels.push(pooled.label);
      expect(labels).toEqual(expectedLabels);
    }
  });

  it("equalizes the two pooled rows when the floor moves to 100", async () => {
    const { screen, served } = mountWithFixtures();
    await screen.whenIdle();
    expect(text('[data-testid="pooled-classical"]')).not.toBe(
      text('[data-testid="pooled-weighted"]'),
    );

    setControl("floor-slider", "100");
    await screen.whenIdle();

    const meta = lastPayload<MetaPayload>(served, "/meta");
    expect(meta.classical).toEqual(meta.weighted);
    const classicalText = text('[data-testid="pooled-classical"]');
    const weightedText = text('[data-testid="pooled-weighted"]');
    expect(classicalText).toBe(weightedText);
    expect(classicalText).toBe(
      ratioWithCi(meta.classical.theta_hat, meta.classical.ci_low, meta.classical.ci_high),
    );
    const forestValues = [...document.querySelectorAll(".forest-row.pooled .forest-value")].map(
      (node) => node.textContent,
    );
    expect(forestValues).toHaveLength(2);
    expect(forestValues[0]).toBe(forestValues[1]);
  });

  it("switches pmax mode and reflects the payload's pmax", async () => {
    const { screen, served } = mountWithFixtures();
    await screen.whenIdle();

    const radio = document.querySelector<HTMLInputElement>('[data-testid="pmax-mode-observed"]');
    radio!.checked = true;
    radio!.dispatchEvent(new Event("change", { bubbles: true }));
    await screen.whenIdle();

    const vector = lastPayload<WeightVectorPayload>(served, "/weights");
    expect(vector.pmax_mode).toBe("observed");
    expect(text('[data-testid="whatif-status"]')).toBe(
      `γ=${fixed(vector.gamma, 2)}, B=${fixed(vector.floor, 0)}, observed pmax=${fixed(vector.pmax, 2)}`,
    );
    const row = document.querySelector(
      `[data-testid="weight-row-${vector.studies[0].study_id}"]`,
    );
    expect(row!.querySelectorAll("td")[4].textContent).toBe(
      fixed(vector.studies[0].weight, 4),
    );
  });

  it("collapses rapid slider changes into one request for the final value", async () => {
    const { fetch, served } = createFixtureFetch();
    const client = new ApiClient("", fetch);
    const screen = new WhatIfScreen({ client, runId: "olaparib-demo", debounceMs: 25 });
    document.body.append(screen.element);
    await screen.whenIdle();
    const baseline = served.length;

    setControl("gamma-slider", "1");
    setControl("gamma-slider", "2");
    await screen.whenIdle();

    const newCalls = served.slice(baseline);
    expect(newCalls).toHaveLength(2);
    for (const call of newCalls) {
      expect((call.body as { gamma: number }).gamma).toBe(2);
    }
    const meta = lastPayload<MetaPayload>(served, "/meta");
    expect(text('[data-testid="pooled-weighted"]')).toBe(
      ratioWithCi(meta.weighted.theta_hat, meta.weighted.ci_low, meta.weighted.ci_high),
    );
  });

  it("ignores a stale response that resolves after a newer one", async () => {
    const { fetch, queue } = createDeferredFetch();
    const client = new ApiClient("", fetch);
    const screen = new WhatIfScreen({ client, runId: "olaparib-demo", debounceMs: 0 });
    document.body.append(screen.element);

    await waitFor(() => queue.length === 2);
    queue[0].respond();
    queue[1].respond();
    await waitFor(() => text('[data-testid="pooled-classical"]') !== "");

    setControl("gamma-slider", "1");
    await waitFor(() => queue.length === 4);
    setControl("gamma-slider", "2");
    await waitFor(() => queue.length === 6);

    // Deliver the newer (γ=2) pair first, then the stale γ=1 pair.
    queue[4].respond();
    queue[5].respond();
    await waitFor(() => text('[data-testid="whatif-status"]').includes("γ=2.00"));
    const fresh = {
      classical: text('[data-testid="pooled-classical"]'),
      weighted: text('[data-testid="pooled-weighted"]'),
      status: text('[data-testid="whatif-status"]'),
    };

    queue[2].respond();
    queue[3].respond();
    await screen.whenIdle();

    expect(text('[data-testid="whatif-status"]')).toBe(fresh.status);
    expect(text('[data-testid="pooled-classical"]')).toBe(fresh.classical);
    expect(text('[data-testid="pooled-weighted"]')).toBe(fresh.weighted);
    expect(fresh.status).toContain("γ=2.00");
    expect(screen.currentParams().gamma).toBe(2);
  });
});
