/** Application shell: run selector plus the three screens (rules, flow,
 * what-if). Screens are remounted on run or tab change so each always reflects
 * current server state. */

import type { ApiClient } from "./api";
import { ApiError } from "./api";
import { PendingTracker } from "./async";
import { clear, el } from "./dom";
import { PrismaScreen } from "./views/prisma";
import { RulesScreen } from "./views/rules";
import { WhatIfScreen } from "./views/whatif";

export type ScreenName = "rules" | "prisma" | "whatif";

export interface AppOptions {
  client: ApiClient;
  debounceMs?: number;
  initialRun?: string;
  initialScreen?: ScreenName;
}

const SCREEN_TITLES: Record<ScreenName, string> = {
  rules: "Rules",
  prisma: "Flow",
  whatif: "What-if",
};

export class App {
  readonly element: HTMLElement;
  readonly tracker = new PendingTracker();

  private readonly client: ApiClient;
  private readonly debounceMs?: number;
  private readonly runSelect = el("select", { "data-testid": "run-select" });
  private readonly screenHost = el("main", {});
  private readonly banner = el("p", { class: "error", "data-testid": "app-error" });
  private readonly tabButtons = new Map<ScreenName, HTMLButtonElement>();

  private currentRun = "";
  private currentScreen: ScreenName;
  private activeView: RulesScreen | PrismaScreen | WhatIfScreen | null = null;

  constructor(options: AppOptions) {
    this.client = options.client;
    this.debounceMs = options.debounceMs;
    this.currentScreen = options.initialScreen ?? "rules";
    if (options.initialRun) {
      this.currentRun = options.initialRun;
    }

    const tabs = el("nav", { class: "tabs" });
    for (const name of Object.keys(SCREEN_TITLES) as ScreenName[]) {
      const button = el("button", { "data-testid": `tab-${name}` }, [SCREEN_TITLES[name]]);
      button.addEventListener("click", () => this.showScreen(name));
      this.tabButtons.set(name, button);
      tabs.append(button);
    }
    this.runSelect.addEventListener("change", () => {
      this.currentRun = this.runSelect.value;
      this.mountScreen();
    });

    this.element = el("div", { class: "app" });
    this.element.append(
      el("header", {}, [
        el("h1", {}, ["metasieve review"]),
        el("label", {}, ["run ", this.runSelect]),
        tabs,
      ]),
      this.banner,
      this.screenHost,
    );
  }

  /** Load the run list and mount the initial screen. */
  async start(): Promise<void> {
    await this.tracker.track(
      this.client
        .listRuns()
        .then((payload) => {
          clear(this.runSelect);
          for (const run of payload.runs) {
            this.runSelect.append(
              el("option", { value: run.run_id }, [`${run.run_id} (${run.state})`]),
            );
          }
          if (!this.currentRun && payload.runs.length > 0) {
            const demo = payload.runs.find((run) => run.run_id === "olaparib-demo");
            this.currentRun = (demo ?? payload.runs[0]).run_id;
          }
          if (this.currentRun) {
            this.runSelect.value = this.currentRun;
          }
          this.mountScreen();
        })
        .catch((error: unknown) => {
          this.banner.textContent =
            error instanceof ApiError
              ? `cannot reach service: ${error.detail}`
              : `cannot reach service: ${String(error)}`;
        }),
    );
  }

  showScreen(name: ScreenName): void {
    this.currentScreen = name;
    this.mountScreen();
  }

  /** The mounted screen instance, for tests. */
  view(): RulesScreen | PrismaScreen | WhatIfScreen | null {
    return this.activeView;
  }

  async whenIdle(): Promise<void> {
    await this.tracker.whenIdle();
    await this.activeView?.whenIdle();
  }

  private mountScreen(): void {
    if (!this.currentRun) {
      return;
    }
    for (const [name, button] of this.tabButtons) {
      button.classList.toggle("active", name === this.currentScreen);
    }
    clear(this.screenHost);
    const common = { client: this.client, runId: this.currentRun };
    switch (this.currentScreen) {
      case "rules":
        this.activeView = new RulesScreen({
          ...common,
          onRunChanged: () => void this.refreshRunList(),
        });
        break;
      case "prisma":
        this.activeView = new PrismaScreen(common);
        break;
      case "whatif":
        this.activeView = new WhatIfScreen({ ...common, debounceMs: this.debounceMs });
        break;
    }
    this.screenHost.append(this.activeView.element);
  }

  private async refreshRunList(): Promise<void> {
    await this.tracker.track(
      this.client
        .listRuns()
        .then((payload) => {
          const keep = this.currentRun;
          clear(this.runSelect);
          for (const run of payload.runs) {
            this.runSelect.append(
              el("option", { value: run.run_id }, [`${run.run_id} (${run.state})`]),
            );
          }
          this.runSelect.value = keep;
        })
        .catch(() => undefined),
    );
  }
}
