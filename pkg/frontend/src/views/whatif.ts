/** What-if screen: γ / floor sliders and a pmax-mode toggle drive live calls
 * to the weights and meta endpoints. Every rendered number is taken from the
 * last-issued request's payloads; stale responses are dropped. */

import type {
  ApiClient,
  MetaPayload,
  MetaRequest,
  WeightVectorPayload,
} from "../api";
import { ApiError } from "../api";
import { PendingTracker, debounce, type Debounced } from "../async";
import { clear, el } from "../dom";
import { fixed, ratioWithCi } from "../format";
import { renderForest } from "../forest";

export interface WhatIfParams {
  gamma: number;
  floor: number;
  pmaxMode: "attainable" | "observed" | "explicit";
  explicitPmax: number;
}

export interface WhatIfOptions {
  client: ApiClient;
  runId: string;
  debounceMs?: number;
}

const DEFAULT_PARAMS: WhatIfParams = {
  gamma: 0.5,
  floor: 20,
  pmaxMode: "attainable",
  explicitPmax: 3.3,
};

export class WhatIfScreen {
  readonly element: HTMLElement;
  readonly tracker = new PendingTracker();

  private readonly client: ApiClient;
  private readonly runId: string;
  private readonly scheduleIssue: Debounced<[]>;
  private params: WhatIfParams = { ...DEFAULT_PARAMS };
  private sequence = 0;
  private timerArmed = false;

  private readonly status = el("p", { class: "status", "data-testid": "whatif-status" });
  private readonly errorBox = el("p", { class: "error", "data-testid": "whatif-error" });
  private readonly pooledClassical = el("span", { "data-testid": "pooled-classical" });
  private readonly pooledWeighted = el("span", { "data-testid": "pooled-weighted" });
  private readonly weightTableBody = el("tbody", { "data-testid": "weight-rows" });
  private readonly forestHost = el("div", {});
  private readonly explicitInput: HTMLInputElement;
  private readonly gammaNumber: HTMLInputElement;
  private readonly floorNumber: HTMLInputElement;

  constructor(options: WhatIfOptions) {
    this.client = options.client;
    this.runId = options.runId;
    this.scheduleIssue = debounce(() => {
      this.timerArmed = false;
      void this.issue();
      this.tracker.end();
    }, options.debounceMs ?? 250);

    this.gammaNumber = el("input", {
      type: "number",
      min: "0.05",
      max: "5",
      step: "0.05",
      value: String(this.params.gamma),
      "data-testid": "gamma-input",
    });
    this.floorNumber = el("input", {
      type: "number",
      min: "1",
      max: "100",
      step: "1",
      value: String(this.params.floor),
      "data-testid": "floor-input",
    });
    this.explicitInput = el("input", {
      type: "number",
      min: "0.1",
      step: "0.1",
      value: String(this.params.explicitPmax),
      "data-testid": "explicit-pmax-input",
      disabled: "",
    });

    this.element = el("section", { class: "screen whatif" });
    this.element.append(
      el("h2", {}, ["Weighting what-if"]),
      this.buildControls(),
      this.errorBox,
      this.status,
      this.buildHeadline(),
      this.buildWeightTable(),
      this.forestHost,
    );
    this.requestRefresh();
  }

  /** Current parameter set (copy), mostly for tests. */
  currentParams(): WhatIfParams {
    return { ...this.params };
  }

  whenIdle(): Promise<void> {
    return this.tracker.whenIdle();
  }

  private buildControls(): HTMLElement {
    const gammaSlider = el("input", {
      type: "range",
      min: "0.05",
      max: "5",
      step: "0.05",
      value: String(this.params.gamma),
      "data-testid": "gamma-slider",
    });
    const floorSlider = el("input", {
      type: "range",
      min: "1",
      max: "100",
      step: "1",
      value: String(this.params.floor),
      "data-testid": "floor-slider",
    });

    const bindNumber = (
      slider: HTMLInputElement,
      box: HTMLInputElement,
      apply: (value: number) => void,
    ) => {
      const onInput = (source: HTMLInputElement, mirror: HTMLInputElement) => () => {
        const value = Number(source.value);
        if (!Number.isFinite(value)) {
          return;
        }
        mirror.value = source.value;
        apply(value);
        this.requestRefresh();
      };
      slider.addEventListener("input", onInput(slider, box));
      box.addEventListener("input", onInput(box, slider));
    };
    bindNumber(gammaSlider, this.gammaNumber, (value) => {
      this.params.gamma = value;
    });
    bindNumber(floorSlider, this.floorNumber, (value) => {
      this.params.floor = value;
    });

    const modeGroup = el("div", { class: "mode-group", role: "radiogroup" });
    for (const mode of ["attainable", "observed", "explicit"] as const) {
      const radio = el("input", {
        type: "radio",
        name: "pmax-mode",
        value: mode,
        "data-testid": `pmax-mode-${mode}`,
      });
      if (mode === this.params.pmaxMode) {
        radio.checked = true;
      }
      radio.addEventListener("change", () => {
        this.params.pmaxMode = mode;
        if (mode === "explicit") {
          this.explicitInput.removeAttribute("disabled");
        } else {
          this.explicitInput.setAttribute("disabled", "");
        }
        this.requestRefresh();
      });
      modeGroup.append(el("label", {}, [radio, ` ${mode}`]));
    }
    this.explicitInput.addEventListener("input", () => {
      const value = Number(this.explicitInput.value);
      if (Number.isFinite(value) && value > 0) {
        this.params.explicitPmax = value;
        if (this.params.pmaxMode === "explicit") {
          this.requestRefresh();
        }
      }
    });

    return el("div", { class: "controls" }, [
      el("label", { class: "control" }, ["γ (mismatch steepness)", gammaSlider, this.gammaNumber]),
      el("label", { class: "control" }, ["B (compatibility floor)", floorSlider, this.floorNumber]),
      el("div", { class: "control" }, ["pmax mode", modeGroup, this.explicitInput]),
    ]);
  }

  private buildHeadline(): HTMLElement {
    return el("div", { class: "pooled-pair", "data-testid": "pooled-pair" }, [
      el("div", {}, [el("strong", {}, ["classical: "]), this.pooledClassical]),
      el("div", {}, [el("strong", {}, ["eligibility-weighted: "]), this.pooledWeighted]),
    ]);
  }

  private buildWeightTable(): HTMLElement {
    const head = el("thead", {}, [
      el("tr", {}, [
        el("th", {}, ["study"]),
        el("th", {}, ["p (penalty)"]),
        el("th", {}, ["f (compatibility)"]),
        el("th", {}, ["S (score)"]),
        el("th", {}, ["w (weight)"]),
      ]),
    ]);
    return el("table", { class: "weight-table" }, [head, this.weightTableBody]);
  }

  /** Arm the debounce; the tracker stays busy until the refresh settles. */
  private requestRefresh(): void {
    if (!this.timerArmed) {
      this.timerArmed = true;
      this.tracker.begin();
    }
    this.scheduleIssue();
  }

  private requestBody(): MetaRequest {
    const body: MetaRequest = {
      gamma: this.params.gamma,
      floor: this.params.floor,
      pmax_mode: this.params.pmaxMode,
    };
    if (this.params.pmaxMode === "explicit") {
      body.explicit_pmax = this.params.explicitPmax;
    }
    return body;
  }

  private async issue(): Promise<void> {
    const sequence = ++this.sequence;
    const body = this.requestBody();
    await this.tracker.track(
      Promise.all([
        this.client.postWeights(this.runId, body),
        this.client.postMeta(this.runId, body),
      ])
        .then(([vector, meta]) => {
          if (sequence !== this.sequence) {
            return;
          }
          this.render(vector, meta);
        })
        .catch((error: unknown) => {
          if (sequence !== this.sequence) {
            return;
          }
          this.renderError(error);
        }),
    );
  }

  private render(vector: WeightVectorPayload, meta: MetaPayload): void {
    this.errorBox.textContent = "";
    this.status.textContent =
      `γ=${fixed(vector.gamma, 2)}, B=${fixed(vector.floor, 0)}, ` +
      `${vector.pmax_mode} pmax=${fixed(vector.pmax, 2)}`;
    this.pooledClassical.textContent = ratioWithCi(
      meta.classical.theta_hat,
      meta.classical.ci_low,
      meta.classical.ci_high,
    );
    this.pooledWeighted.textContent = ratioWithCi(
      meta.weighted.theta_hat,
      meta.weighted.ci_low,
      meta.weighted.ci_high,
    );

    clear(this.weightTableBody);
    for (const row of vector.studies) {
      this.weightTableBody.append(
        el("tr", { "data-testid": `weight-row-${row.study_id}` }, [
          el("td", {}, [row.study_id]),
          el("td", { class: "num", "data-col": "penalty" }, [fixed(row.penalty, 2)]),
          el("td", { class: "num", "data-col": "compatibility" }, [fixed(row.compatibility, 4)]),
          el("td", { class: "num", "data-col": "score" }, [fixed(row.score, 2)]),
          el("td", { class: "num", "data-col": "weight" }, [fixed(row.weight, 4)]),
        ]),
      );
    }

    clear(this.forestHost);
    this.forestHost.append(renderForest(meta.forest));
  }

  private renderError(error: unknown): void {
    if (error instanceof ApiError) {
      this.errorBox.textContent = error.message;
    } else {
      this.errorBox.textContent = String(error);
    }
  }
}
