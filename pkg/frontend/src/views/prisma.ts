/** PRISMA screen: stage-by-stage bars of remaining/excluded counts, with a
 * per-trial verdict drill-down backed by the run's audit trail. */

import type { ApiClient, AuditEventPayload, PrismaFlowPayload } from "../api";
import { ApiError } from "../api";
import { PendingTracker } from "../async";
import { clear, el } from "../dom";

export interface PrismaOptions {
  client: ApiClient;
  runId: string;
}

interface VerdictDetail {
  trialId: string;
  keep: boolean;
  flagged: boolean;
  flagReason: string;
}

export class PrismaScreen {
  readonly element: HTMLElement;
  readonly tracker = new PendingTracker();

  private readonly client: ApiClient;
  private readonly runId: string;
  private readonly stagesHost = el("div", { class: "stages" });
  private readonly drilldown = el("div", { class: "drilldown", "data-testid": "drilldown" });
  private readonly message = el("p", { class: "status", "data-testid": "prisma-message" });
  private verdictsByStage = new Map<number, VerdictDetail[]>();

  constructor(options: PrismaOptions) {
    this.client = options.client;
    this.runId = options.runId;
    this.element = el("section", { class: "screen prisma" });
    this.element.append(el("h2", {}, ["Screening flow"]), this.message, this.stagesHost, this.drilldown);
    void this.tracker.track(this.load());
  }

  whenIdle(): Promise<void> {
    return this.tracker.whenIdle();
  }

  private async load(): Promise<void> {
    try {
      const [flow, audit] = await Promise.all([
        this.client.getPrisma(this.runId),
        this.client.getAudit(this.runId),
      ]);
      this.indexVerdicts(audit.events);
      this.renderFlow(flow);
      this.message.textContent = "";
    } catch (error) {
      this.message.textContent =
        error instanceof ApiError ? `error: ${error.detail}` : `error: ${String(error)}`;
    }
  }

  private indexVerdicts(events: AuditEventPayload[]): void {
    this.verdictsByStage = new Map();
    for (const event of events) {
      if (event.kind !== "verdict") {
        continue;
      }
      const payload = event.payload as {
        stage: number;
        plan: string;
        trial_id: string;
        keep: boolean;
        flagged: boolean;
        flag_reason: string;
      };
      const bucket = this.verdictsByStage.get(payload.stage) ?? [];
      bucket.push({
        trialId: payload.trial_id,
        keep: payload.keep,
        flagged: payload.flagged,
        flagReason: payload.flag_reason,
      });
      this.verdictsByStage.set(payload.stage, bucket);
    }
  }

  private renderFlow(flow: PrismaFlowPayload): void {
    clear(this.stagesHost);
    const scale = flow.initial_count > 0 ? flow.initial_count : 1;

    const header = el("div", { class: "stage-row", "data-testid": "stage-identified" }, [
      el("span", { class: "stage-label" }, ["identified"]),
      el("span", { class: "stage-counts" }, [`${flow.initial_count} records`]),
    ]);
    this.stagesHost.append(header);

    flow.stages.forEach((stage, index) => {
      const row = el("div", { class: "stage-row", "data-testid": `stage-row-${index}` });
      const bar = el("div", { class: "bar" });
      bar.append(
        el("span", {
          class: "bar-remaining",
          style: `width: ${(stage.remaining / scale) * 100}%`,
        }),
        el("span", {
          class: "bar-excluded",
          style: `width: ${(stage.excluded / scale) * 100}%`,
        }),
      );
      const counts = el("span", { class: "stage-counts" }, [
        el("span", { "data-testid": `stage-remaining-${index}` }, [String(stage.remaining)]),
        " kept · ",
        el("span", { "data-testid": `stage-excluded-${index}` }, [String(stage.excluded)]),
        " excluded",
      ]);
      const label = el("button", { class: "stage-label", "data-testid": `stage-label-${index}` }, [
        stage.label,
      ]);
      label.addEventListener("click", () => this.renderDrilldown(index, stage.label));
      row.append(label, bar, counts);
      this.stagesHost.append(row);
    });

    this.stagesHost.append(
      el("div", { class: "stage-row total", "data-testid": "stage-final" }, [
        el("span", { class: "stage-label" }, ["selected"]),
        el("span", { class: "stage-counts", "data-testid": "final-count" }, [
          String(flow.final_count),
        ]),
      ]),
    );
  }

  private renderDrilldown(stageIndex: number, label: string): void {
    clear(this.drilldown);
    const verdicts = this.verdictsByStage.get(stageIndex) ?? [];
    this.drilldown.append(
      el("h3", {}, [`verdicts at "${label}" (${verdicts.length} judged)`]),
    );
    const list = el("ul", { class: "verdicts" });
    for (const verdict of verdicts) {
      const marker = verdict.keep ? "✓ kept" : "✗ excluded";
      const flag = verdict.flagged ? ` ⚑ ${verdict.flagReason}` : "";
      const reason = !verdict.keep && verdict.flagReason ? ` — ${verdict.flagReason}` : "";
      list.append(
        el("li", { "data-testid": `verdict-${verdict.trialId}` }, [
          `${verdict.trialId}: ${marker}${reason}${flag}`,
        ]),
      );
    }
    if (verdicts.length === 0) {
      list.append(el("li", {}, ["no per-trial verdicts recorded for this stage"]));
    }
    this.drilldown.append(list);
  }
}
