/** End-to-end against a real service process over a real socket: the rule
 * edit → approve → execute round-trip, and the what-if screen on the live
 * demo run. */

import { spawn, type ChildProcessWithoutNullStreams } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { RulesScreen } from "../src/views/rules";
import { WhatIfScreen } from "../src/views/whatif";
import { sleep, text } from "./helpers";

const PORT = 18950 + Math.floor(Math.random() * 500);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcessWithoutNullStreams;
let serverLog = "";
let client: ApiClient;

beforeAll(async () => {
  const stateDir = mkdtempSync(join(tmpdir(), "metasieve-ui-live-"));
  server = spawn("metasieve", ["serve", "--state-dir", stateDir, "--port", String(PORT)]);
  server.stdout.on("data", (chunk: Buffer) => {
    serverLog += chunk.toString();
  });
  server.stderr.on("data", (chunk: Buffer) => {
    serverLog += chunk.toString();
  });
  client = new ApiClient(BASE);
  for (let attempt = 0; ; attempt += 1) {
    try {
      await client.listRuns();
      break;
    } catch {
      if (attempt >= 120) {
        throw new Error(`service never became ready on ${BASE}\n${serverLog}`);
      }
      await sleep(500);
    }
  }
});

afterAll(() => {
  server?.kill();
});

beforeEach(() => {
  document.body.innerHTML = "";
});

function control<T extends HTMLElement>(testId: string): T {
  const node = document.querySelector<T>(`[data-testid="${testId}"]`);
  if (!node) {
    throw new Error(`missing ${testId}`);
  }
  return node;
}

describe("live service round-trips", () => {
  it("edit → approve → execute increments the revision and advances the run state, with matching audit events", async () => {
    const demo = await client.getRun("olaparib-demo");
    const created = await client.createRun({
      run_id: "ui-lifecycle",
      query: "maintenance olaparib review",
      corpus: demo.corpus_ref,
      parser: demo.parser_spec,
      plans: demo.plan_set,
      lists: demo.lists,
      rules: ["Include only randomized trials with a comparator arm."],
    });
    expect(created.state).toBe("draft");
    expect(created.rule_set?.revision).toBe(1);

    const screen = new RulesScreen({ client, runId: "ui-lifecycle" });
    document.body.append(screen.element);
    await screen.whenIdle();
    expect(text('[data-testid="revision-badge"]')).toBe("revision 1");
    expect(text('[data-testid="state-badge"]')).toBe("draft");

    // Edit: approve must stay disabled while the buffer is dirty.
    const area = control<HTMLTextAreaElement>("rule-text-0");
    area.value = "Include only randomized maintenance trials with a comparator arm.";
    area.dispatchEvent(new Event("input", { bubbles: true }));
    expect(control<HTMLButtonElement>("approve-rules").hasAttribute("disabled")).toBe(true);

    control<HTMLButtonElement>("save-rules").click();
    await screen.whenIdle();
    expect(text('[data-testid="revision-badge"]')).toBe("revision 2");
    const afterSave = await client.getRun("ui-lifecycle");
    expect(afterSave.rule_set?.revision).toBe(2);
    expect(afterSave.state).toBe("draft");

    control<HTMLButtonElement>("approve-rules").click();
    await screen.whenIdle();
    expect(text('[data-testid="rules-status"]')).toBe("approved");
    expect(text('[data-testid="state-badge"]')).toBe("rules-approved");

    control<HTMLButtonElement>("execute-run").click();
    await screen.whenIdle();
    expect(text('[data-testid="state-badge"]')).toBe("filtered");
    expect(text('[data-testid="rules-message"]')).toMatch(/^executed: \d+ of \d+ trials selected$/);

    const finalDoc = await client.getRun("ui-lifecycle");
    expect(finalDoc.state).toBe("filtered");
    expect(finalDoc.rule_set?.revision).toBe(2);
    expect(finalDoc.rule_set?.status).toBe("approved");

    const audit = await client.getAudit("ui-lifecycle");
    const kinds = audit.events.map((event) => event.kind);
    expect(kinds[0]).toBe("rule-created");
    const editActions = audit.events
      .filter((event) => event.kind === "rule-edited")
      .map((event) => event.payload.action);
    expect(editActions).toEqual(["edited", "approved"]);
    expect(kinds).toContain("plan-validated");
    expect(kinds).toContain("verdict");
    expect(kinds).toContain("stage-summary");
    expect(audit.events.map((event) => event.sequence)).toEqual(
      audit.events.map((_, index) => index + 1),
    );
  });

  it("what-if on the live demo run shows the pooled pair and equalizes at floor 100", async () => {
    const screen = new WhatIfScreen({ client, runId: "olaparib-demo", debounceMs: 0 });
    document.body.append(screen.element);
    await screen.whenIdle();

    expect(text('[data-testid="pooled-classical"]').startsWith("2.18")).toBe(true);
    expect(text('[data-testid="pooled-weighted"]').startsWith("1.97")).toBe(true);

    const floor = control<HTMLInputElement>("floor-slider");
    floor.value = "100";
    floor.dispatchEvent(new Event("input", { bubbles: true }));
    await screen.whenIdle();

    expect(text('[data-testid="pooled-classical"]')).toBe(
      text('[data-testid="pooled-weighted"]'),
    );
    expect(text('[data-testid="whatif-error"]')).toBe("");
  });
});
