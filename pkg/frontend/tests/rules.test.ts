/** Rule-review screen logic: dirty-flag gating of approval, save round-trips,
 * and frozen rendering for runs already past the draft state. */

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import type { RuleSetPayload, RunDocument } from "../src/api";
import { RulesScreen } from "../src/views/rules";
import { createFixtureFetch, createStubFetch, fixtureJson, text } from "./helpers";

function enabled(testId: string): boolean {
  const node = document.querySelector(`[data-testid="${testId}"]`);
  if (!node) {
    throw new Error(`missing ${testId}`);
  }
  return !node.hasAttribute("disabled");
}

function typeRule(index: number, value: string): void {
  const area = document.querySelector<HTMLTextAreaElement>(`[data-testid="rule-text-${index}"]`);
  if (!area) {
    throw new Error(`missing rule textarea ${index}`);
  }
  area.value = value;
  area.dispatchEvent(new Event("input", { bubbles: true }));
}

function click(testId: string): void {
  document.querySelector<HTMLButtonElement>(`[data-testid="${testId}"]`)!.click();
}

/** In-memory lifecycle double mirroring the service's transition rules. */
function draftRunRoutes(runId: string) {
  const doc = fixtureJson<RunDocument>("run_olaparib.json");
  const state = {
    runState: "draft",
    revision: 1,
    status: "draft",
    rules: ["Include only randomized trials."],
  };
  const rulesPayload = (): RuleSetPayload => ({
    revision: state.revision,
    status: state.status,
    rules: state.rules.map((ruleText, index) => ({
      rule_id: `rule-${index + 1}`,
      text: ruleText,
      kind: ruleText.trim().toLowerCase().startsWith("exclude") ? "exclude" : "include",
    })),
  });
  return {
    [`GET /runs/${runId}`]: () => ({
      ...doc,
      run_id: runId,
      state: state.runState,
      rule_set: rulesPayload(),
    }),
    [`PUT /runs/${runId}/rules`]: (body: Record<string, unknown> | undefined) => {
      if (body?.action === "edit") {
        state.rules = body.rules as string[];
        state.revision += 1;
        state.status = "draft";
      } else {
        state.status = "approved";
        state.runState = "rules-approved";
      }
      return rulesPayload();
    },
    [`POST /runs/${runId}/execute`]: () => {
      state.runState = "filtered";
      return {
        flow: { initial_count: 5, stages: [{ label: "x", remaining: 4, excluded: 1 }], final_count: 4 },
        selected: ["NCT1", "NCT2", "NCT3", "NCT4"],
        summaries: [],
      };
    },
  };
}

beforeEach(() => {
  document.body.innerHTML = "";
});

describe("rule review", () => {
  it("renders an already-filtered run read-only", async () => {
    const { fetch } = createFixtureFetch();
    const screen = new RulesScreen({ client: new ApiClient("", fetch), runId: "olaparib-demo" });
    document.body.append(screen.element);
    await screen.whenIdle();

    expect(text('[data-testid="revision-badge"]')).toBe("revision 1");
    expect(text('[data-testid="state-badge"]')).toBe("filtered");
    expect(text('[data-testid="rules-status"]')).toBe("approved");
    const area = document.querySelector('[data-testid="rule-text-0"]');
    expect(area?.hasAttribute("disabled")).toBe(true);
    expect(enabled("save-rules")).toBe(false);
    expect(enabled("approve-rules")).toBe(false);
    expect(enabled("execute-run")).toBe(false);
    expect(enabled("add-rule")).toBe(false);
  });

  it("disables approve while the edit buffer is dirty", async () => {
    const { fetch } = createStubFetch(draftRunRoutes("draft-run"));
    const screen = new RulesScreen({ client: new ApiClient("", fetch), runId: "draft-run" });
    document.body.append(screen.element);
    await screen.whenIdle();

    expect(screen.isDirty()).toBe(false);
    expect(enabled("approve-rules")).toBe(true);
    expect(enabled("save-rules")).toBe(false);

    typeRule(0, "Include only randomized trials with a comparator arm.");
    expect(screen.isDirty()).toBe(true);
    expect(enabled("approve-rules")).toBe(false);
    expect(enabled("save-rules")).toBe(true);

    typeRule(0, "Include only randomized trials.");
    expect(screen.isDirty()).toBe(false);
    expect(enabled("approve-rules")).toBe(true);
    expect(enabled("save-rules")).toBe(false);
  });

  it("save clears the dirty flag and bumps the revision badge", async () => {
    const { fetch, served } = createStubFetch(draftRunRoutes("draft-run"));
    const screen = new RulesScreen({ client: new ApiClient("", fetch), runId: "draft-run" });
    document.body.append(screen.element);
    await screen.whenIdle();

    typeRule(0, "Include only randomized phase 3 trials.");
    click("save-rules");
    await screen.whenIdle();

    expect(text('[data-testid="revision-badge"]')).toBe("revision 2");
    expect(screen.isDirty()).toBe(false);
    expect(enabled("approve-rules")).toBe(true);
    const put = served.find((call) => call.method === "PUT");
    expect(put?.body).toEqual({
      action: "edit",
      rules: ["Include only randomized phase 3 trials."],
    });
  });

  it("approve freezes editing and enables execute; execute reports the flow", async () => {
    const { fetch } = createStubFetch(draftRunRoutes("draft-run"));
    const screen = new RulesScreen({ client: new ApiClient("", fetch), runId: "draft-run" });
    document.body.append(screen.element);
    await screen.whenIdle();

    click("approve-rules");
    await screen.whenIdle();
    expect(text('[data-testid="rules-status"]')).toBe("approved");
    expect(text('[data-testid="state-badge"]')).toBe("rules-approved");
    expect(document.querySelector('[data-testid="rule-text-0"]')?.hasAttribute("disabled")).toBe(
      true,
    );
    expect(enabled("execute-run")).toBe(true);

    click("execute-run");
    await screen.whenIdle();
    expect(text('[data-testid="state-badge"]')).toBe("filtered");
    expect(text('[data-testid="rules-message"]')).toBe("executed: 4 of 5 trials selected");
    expect(enabled("execute-run")).toBe(false);
  });
});
