/** Rule-review screen: inline rule editing with dirty tracking, approval, and
 * execution. Approve stays disabled while the edit buffer differs from the
 * server copy, so the approved text is always exactly what the server holds. */

import type { ApiClient, RuleSetPayload, RunDocument } from "../api";
import { ApiError } from "../api";
import { PendingTracker } from "../async";
import { clear, el } from "../dom";

export interface RulesOptions {
  client: ApiClient;
  runId: string;
  onRunChanged?: () => void;
}

export class RulesScreen {
  readonly element: HTMLElement;
  readonly tracker = new PendingTracker();

  private readonly client: ApiClient;
  private readonly runId: string;
  private readonly onRunChanged?: () => void;

  private runState = "";
  private serverRules: string[] = [];
  private buffer: string[] = [];
  private revision = 0;
  private ruleStatus = "draft";

  private readonly revisionBadge = el("span", {
    class: "badge",
    "data-testid": "revision-badge",
  });
  private readonly stateBadge = el("span", { class: "badge", "data-testid": "state-badge" });
  private readonly statusBadge = el("span", { class: "badge", "data-testid": "rules-status" });
  private readonly listHost = el("div", { class: "rule-list" });
  private readonly message = el("p", { class: "status", "data-testid": "rules-message" });
  private readonly saveButton = el("button", { "data-testid": "save-rules" }, ["Save rules"]);
  private readonly approveButton = el("button", { "data-testid": "approve-rules" }, ["Approve"]);
  private readonly executeButton = el("button", { "data-testid": "execute-run" }, ["Execute"]);
  private readonly addButton = el("button", { "data-testid": "add-rule" }, ["Add rule"]);

  constructor(options: RulesOptions) {
    this.client = options.client;
    this.runId = options.runId;
    this.onRunChanged = options.onRunChanged;

    this.saveButton.addEventListener("click", () => void this.save());
    this.approveButton.addEventListener("click", () => void this.approve());
    this.executeButton.addEventListener("click", () => void this.execute());
    this.addButton.addEventListener("click", () => {
      this.buffer.push("");
      this.renderRules();
    });

    this.element = el("section", { class: "screen rules" });
    this.element.append(
      el("h2", {}, ["Rule review"]),
      el("p", { class: "badges" }, [this.revisionBadge, " ", this.statusBadge, " ", this.stateBadge]),
      this.listHost,
      el("p", { class: "actions" }, [this.addButton, " ", this.saveButton, " ", this.approveButton, " ", this.executeButton]),
      this.message,
    );
    void this.tracker.track(this.load());
  }

  whenIdle(): Promise<void> {
    return this.tracker.whenIdle();
  }

  isDirty(): boolean {
    return (
      this.buffer.length !== this.serverRules.length ||
      this.buffer.some((text, index) => text !== this.serverRules[index])
    );
  }

  private async load(): Promise<void> {
    try {
      const doc = await this.client.getRun(this.runId);
      this.applyRun(doc);
    } catch (error) {
      this.showError(error);
    }
  }

  private applyRun(doc: RunDocument): void {
    this.runState = doc.state;
    this.applyRuleSet(doc.rule_set);
  }

  private applyRuleSet(ruleSet: RuleSetPayload | null): void {
    this.serverRules = ruleSet ? ruleSet.rules.map((rule) => rule.text) : [];
    this.buffer = [...this.serverRules];
    this.revision = ruleSet ? ruleSet.revision : 0;
    this.ruleStatus = ruleSet ? ruleSet.status : "none";
    this.renderRules();
  }

  private renderRules(): void {
    this.revisionBadge.textContent = `revision ${this.revision}`;
    this.stateBadge.textContent = this.runState;
    this.statusBadge.textContent = this.ruleStatus;

    clear(this.listHost);
    const editable = this.runState === "draft";
    this.buffer.forEach((text, index) => {
      const area = el("textarea", {
        rows: "2",
        "data-testid": `rule-text-${index}`,
      }) as HTMLTextAreaElement;
      area.value = text;
      if (!editable) {
        area.setAttribute("disabled", "");
      }
      area.addEventListener("input", () => {
        this.buffer[index] = area.value;
        this.refreshActions();
      });
      const remove = el("button", { class: "remove", "data-testid": `remove-rule-${index}` }, [
        "✕",
      ]);
      if (!editable) {
        remove.setAttribute("disabled", "");
      }
      remove.addEventListener("click", () => {
        this.buffer.splice(index, 1);
        this.renderRules();
      });
      this.listHost.append(el("div", { class: "rule-item" }, [area, remove]));
    });
    if (this.buffer.length === 0) {
      this.listHost.append(el("p", { class: "empty" }, ["No rules yet — add one."]));
    }
    this.refreshActions();
  }

  private refreshActions(): void {
    const dirty = this.isDirty();
    const draftState = this.runState === "draft";
    this.setEnabled(this.addButton, draftState);
    this.setEnabled(this.saveButton, draftState && dirty && this.buffer.every((t) => t.trim() !== ""));
    this.setEnabled(
      this.approveButton,
      draftState && !dirty && this.serverRules.length > 0 && this.ruleStatus === "draft",
    );
    this.setEnabled(this.executeButton, this.runState === "rules-approved");
  }

  private setEnabled(button: HTMLElement, enabled: boolean): void {
    if (enabled) {
      button.removeAttribute("disabled");
    } else {
      button.setAttribute("disabled", "");
    }
  }

  private async save(): Promise<void> {
    await this.tracker.track(
      this.client
        .putRules(this.runId, { action: "edit", rules: [...this.buffer] })
        .then((ruleSet) => {
          this.applyRuleSet(ruleSet);
          this.message.textContent = `saved revision ${ruleSet.revision}`;
        })
        .catch((error: unknown) => this.showError(error)),
    );
  }

  private async approve(): Promise<void> {
    await this.tracker.track(
      this.client
        .putRules(this.runId, { action: "approve" })
        .then(async (ruleSet) => {
          const doc = await this.client.getRun(this.runId);
          this.runState = doc.state;
          this.applyRuleSet(ruleSet);
          this.message.textContent = "rules approved";
          this.onRunChanged?.();
        })
        .catch((error: unknown) => this.showError(error)),
    );
  }

  private async execute(): Promise<void> {
    await this.tracker.track(
      this.client
        .execute(this.runId)
        .then(async (result) => {
          const doc = await this.client.getRun(this.runId);
          this.applyRun(doc);
          this.message.textContent =
            `executed: ${result.selected.length} of ${result.flow.initial_count} trials selected`;
          this.onRunChanged?.();
        })
        .catch((error: unknown) => this.showError(error)),
    );
  }

  private showError(error: unknown): void {
    this.message.textContent =
      error instanceof ApiError ? `error: ${error.message}` : `error: ${String(error)}`;
  }
}
