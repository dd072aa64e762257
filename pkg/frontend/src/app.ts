/** Browser entry point: wires the API client and render models into the DOM.
 *
 * The page is a single session against one service instance; all state lives
 * in ViewState and every figure on screen comes from a payload field.
 */

import { ApiClient, ApiError } from "./client.js";
import { dossierView } from "./dossier.js";
import { correctionSwitch, neighborCards } from "./neighbors.js";
import { paginateColumns, RasterModel, STATE_COLORS, StateName } from "./raster.js";
import { ViewState, Tab } from "./state.js";
import { SortDirection, SortKey, suspectTable } from "./suspects.js";
import { sweepChart } from "./sweep.js";

const RASTER_PAGE = 40;       // member columns per raster page
const TABS: { id: Tab; label: string }[] = [
  { id: "suspects", label: "Suspects" },
  { id: "clusters", label: "Clusters" },
  { id: "sweep", label: "Threshold sweep" },
  { id: "neighbors", label: "Neighbors" },
];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, attrs: Record<string, string> = {},
  children: (Node | string)[] = []): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") {
      node.className = value;
    } else {
      node.setAttribute(key, value);
    }
  }
  node.append(...children);
  return node;
}

function clear(node: HTMLElement): HTMLElement {
  node.replaceChildren();
  return node;
}

export class Console {
  private state = new ViewState();
  private sortKey: SortKey = "rank";
  private sortDirection: SortDirection = "asc";
  private neighborCorrection: string | undefined;
  private neighborDepth = 1;

  private runSelect!: HTMLSelectElement;
  private tabBar!: HTMLElement;
  private trailBar!: HTMLElement;
  private main!: HTMLElement;

  constructor(private client: ApiClient, private root: HTMLElement) {}

  async start(): Promise<void> {
    this.buildShell();
    const runs = await this.client.runs();
    const complete = runs.filter((run) => run.status === "complete"
                                 && run.pipeline !== "synth");
    for (const run of complete) {
      this.runSelect.append(el("option", { value: run.run_id },
                               [`${run.run_id} (${run.pipeline})`]));
    }
    if (complete.length) {
      await this.selectRun(complete[0].run_id);
    } else {
      this.main.append(el("p", {}, ["No completed analysis runs on this server."]));
    }
  }

  private buildShell(): void {
    this.runSelect = el("select", { class: "run-select" });
    this.runSelect.addEventListener("change",
      () => void this.selectRun(this.runSelect.value));
    this.tabBar = el("nav", { class: "tabs" });
    for (const tab of TABS) {
      const button = el("button", { "data-tab": tab.id }, [tab.label]);
      button.addEventListener("click", () => void this.showTab(tab.id));
      this.tabBar.append(button);
    }
    this.trailBar = el("div", { class: "trail" });
    this.main = el("main", {});
    this.root.append(
      el("header", {}, [
        el("h1", {}, ["Surveillance console"]),
        el("label", {}, ["Run: ", this.runSelect]),
      ]),
      this.tabBar, this.trailBar, this.main);
    this.renderTrail();
  }

  private async selectRun(runId: string): Promise<void> {
    this.state.selectRun(runId);
    this.renderTrail();
    await this.showTab(this.state.tab);
  }

  private async showTab(tab: Tab): Promise<void> {
    this.state.tab = tab;
    for (const button of this.tabBar.querySelectorAll("button")) {
      button.classList.toggle("active", button.dataset.tab === tab);
    }
    clear(this.main);
    if (!this.state.run) {
      return;
    }
    try {
      if (tab === "suspects") {
        await this.renderSuspects();
      } else if (tab === "clusters") {
        await this.renderClusters();
      } else if (tab === "sweep") {
        await this.renderSweep();
      } else {
        await this.renderNeighbors();
      }
    } catch (err) {
      this.main.append(el("p", { class: "error" }, [
        err instanceof ApiError ? `${err.code}: ${err.message}` : String(err)]));
    }
  }

  // -- suspects -------------------------------------------------------------

  private async renderSuspects(): Promise<void> {
    const payload = await this.client.suspects(this.state.run!);
    this.state.know(payload.rows.map((row) => row.investor));

    const scoreInput = el("input", {
      type: "number", step: "0.01", min: "0", max: "1",
      value: String(this.state.filters.scoreFloor),
    });
    const typeSelect = el("select", {});
    typeSelect.append(el("option", { value: "" }, ["all types"]));
    for (const type of [...new Set(payload.rows.map((row) => row.type))].sort()) {
      typeSelect.append(el("option", { value: type }, [type]));
    }
    typeSelect.value = this.state.filters.type ?? "";
    const rerender = () => {
      this.state.filters.scoreFloor = Number(scoreInput.value) || 0;
      this.state.filters.type = typeSelect.value || null;
      void this.renderSuspects();
    };
    scoreInput.addEventListener("change", rerender);
    typeSelect.addEventListener("change", rerender);

    const table = suspectTable(payload,
      { scoreFloor: this.state.filters.scoreFloor, type: this.state.filters.type },
      this.sortKey, this.sortDirection);
    const head = el("tr", {});
    table.header.forEach((label, idx) => {
      const th = el("th", {}, [label]);
      th.addEventListener("click", () => {
        const key = ["rank", "investor", "type", "category", "directionality",
                     "expected_profit", "shares_bought", "score"][idx] as SortKey;
        this.sortDirection = this.sortKey === key
          && this.sortDirection === "asc" ? "desc" : "asc";
        this.sortKey = key;
        void this.renderSuspects();
      });
      head.append(th);
    });
    const body = el("tbody", {});
    for (const row of table.rows) {
      const tr = el("tr", { class: "clickable" });
      for (const cell of table.cells(row)) {
        tr.append(el("td", {}, [cell]));
      }
      tr.addEventListener("click", () => this.useAsSeed(row.investor));
      body.append(tr);
    }
    clear(this.main).append(
      el("p", {}, [
        `${payload.stock} ${payload.direction} suspects, K=${payload.k}, ` +
        `rewarding cluster ${payload.rewarding_cluster}, window ` +
        `${payload.ref_start} .. ${payload.ref_end}`]),
      el("div", { class: "filters" }, [
        el("label", {}, ["score ≥ ", scoreInput]),
        el("label", {}, ["type ", typeSelect]),
      ]),
      el("table", { class: "suspects" },
         [el("thead", {}, [head]), body]),
      el("p", { class: "hint" }, ["Click a row to use the investor as a seed."]));
  }

  // -- clusters, dossier, raster ---------------------------------------------

  private async renderClusters(): Promise<void> {
    const payload = await this.client.clusters(this.state.run!);
    for (const cluster of payload.clusters) {
      this.state.know(cluster.members);
    }
    const rows = payload.clusters.filter(
      (c) => c.r_c >= this.state.filters.rFloor);
    const floorInput = el("input", {
      type: "number", step: "0.1", min: "0", max: "1",
      value: String(this.state.filters.rFloor),
    });
    floorInput.addEventListener("change", () => {
      this.state.filters.rFloor = Number(floorInput.value) || 0;
      void this.renderClusters();
    });

    const body = el("tbody", {});
    for (const cluster of rows) {
      const tr = el("tr", { class: cluster.suspect ? "clickable suspect" : "clickable" });
      tr.append(
        el("td", {}, [String(cluster.cluster)]),
        el("td", {}, [String(cluster.n_members)]),
        el("td", {}, [String(cluster.n_active)]),
        el("td", {}, [cluster.r_c.toFixed(3)]),
        el("td", {}, [cluster.pi_c.toFixed(2)]),
        el("td", {}, [cluster.suspect ? "flagged" : ""]));
      tr.addEventListener("click", () => void this.renderDossier(cluster.cluster));
      body.append(tr);
    }
    clear(this.main).append(
      el("p", {}, [
        `${payload.n_clusters} communities under ${payload.correction}, ` +
        `codelength ${payload.codelength.toFixed(4)} bits`]),
      el("div", { class: "filters" },
         [el("label", {}, ["R_C ≥ ", floorInput])]),
      el("table", { class: "clusters" }, [
        el("thead", {}, [el("tr", {}, [
          el("th", {}, ["Cluster"]), el("th", {}, ["Members"]),
          el("th", {}, ["Active"]), el("th", {}, ["R_C"]),
          el("th", {}, ["π_C"]), el("th", {}, ["Flag"])])]),
        body]),
      el("div", { class: "dossier-slot" }));
  }

  private async renderDossier(cluster: number): Promise<void> {
    const slot = this.main.querySelector<HTMLElement>(".dossier-slot");
    if (!slot) {
      return;
    }
    const [dossier, raster] = await Promise.all([
      this.client.dossier(this.state.run!, cluster),
      this.client.raster(this.state.run!, cluster),
    ]);
    const view = dossierView(dossier);
    const fields = el("dl", {});
    for (const field of view.fields) {
      fields.append(el("dt", {}, [field.label]), el("dd", {}, [field.value]));
    }
    const memberList = el("p", { class: "members" }, []);
    for (const member of view.members) {
      const link = el("a", { href: "#" }, [member]);
      link.addEventListener("click", (event) => {
        event.preventDefault();
        this.useAsSeed(member);
      });
      memberList.append(link, " ");
    }
    clear(slot).append(
      el("h2", {}, [view.title]), fields,
      el("p", {}, ["Members (click to seed): "]), memberList,
      this.renderRasterGrid(new RasterModel(raster)));
  }

  private renderRasterGrid(model: RasterModel): HTMLElement {
    const markers = model.markerRows();
    const wrapper = el("div", { class: "raster" });
    const pages = paginateColumns(model.members.length, RASTER_PAGE);
    for (const page of pages) {
      const grid = el("div", {
        class: "raster-page",
        style: `grid-template-columns: repeat(${page.end - page.start}, 8px)`,
      });
      for (let day = 0; day < model.days.length; day++) {
        for (let member = page.start; member < page.end; member++) {
          const cell = model.cellAt(day, member);
          const attrs: Record<string, string> = {
            class: "cell",
            style: `background:${STATE_COLORS[cell.state]}`,
            title: `${cell.investor} ${cell.day} ${cell.state}`,
          };
          if (day === markers.pse) {
            attrs.class += " marker-pse";
          } else if (day === markers.refStart) {
            attrs.class += " marker-ref";
          }
          grid.append(el("div", attrs));
        }
      }
      wrapper.append(grid);
    }
    const legend = el("p", { class: "legend" });
    for (const state of Object.keys(STATE_COLORS) as StateName[]) {
      legend.append(
        el("span", { class: "swatch", style: `background:${STATE_COLORS[state]}` }),
        ` ${state}  `);
    }
    legend.append("— orange line: offer announcement, blue line: window start");
    wrapper.append(legend);
    return wrapper;
  }

  // -- sweep ------------------------------------------------------------------

  private async renderSweep(): Promise<void> {
    const payload = await this.client.sweep(this.state.run!);
    const chart = sweepChart(payload);
    const width = 640;
    const height = 240;
    const pad = 30;
    const maxMetric = Math.max(...chart.points.map((p) => p.metric), 1);
    const xPix = (t: number) => pad + chart.x(t) * (width - 2 * pad);
    const yPix = (m: number) => height - pad - (m / maxMetric) * (height - 2 * pad);
    const svgNS = "http://www.w3.org/2000/svg";
    const svg = document.createElementNS(svgNS, "svg");
    svg.setAttribute("width", String(width));
    svg.setAttribute("height", String(height));
    const line = document.createElementNS(svgNS, "polyline");
    line.setAttribute("points", chart.points
      .map((p) => `${xPix(p.threshold)},${yPix(p.metric)}`).join(" "));
    line.setAttribute("fill", "none");
    line.setAttribute("stroke", "steelblue");
    svg.append(line);
    for (const point of chart.points) {
      const dot = document.createElementNS(svgNS, "circle");
      dot.setAttribute("cx", String(xPix(point.threshold)));
      dot.setAttribute("cy", String(yPix(point.metric)));
      dot.setAttribute("r", point === chart.best ? "6" : "3");
      dot.setAttribute("fill", point === chart.best ? "crimson" : "steelblue");
      const title = document.createElementNS(svgNS, "title");
      title.textContent = `p ≤ ${point.threshold}: ${point.n_edges} edges, ` +
        `${point.metric} ${payload.metric}`;
      dot.append(title);
      svg.append(dot);
    }
    clear(this.main).append(
      el("p", {}, [
        `${payload.metric} across validation thresholds; best ` +
        `${payload.best_threshold === null ? "n/a" : payload.best_threshold}`]),
      svg);
  }

  // -- neighbors ----------------------------------------------------------------

  private useAsSeed(investor: string): void {
    try {
      this.state.pushSeed(investor);
    } catch (err) {
      window.alert(String(err));
      return;
    }
    this.renderTrail();
    void this.showTab("neighbors");
  }

  private async renderNeighbors(): Promise<void> {
    const seed = this.state.currentSeed;
    if (!seed) {
      clear(this.main).append(el("p", {}, [
        "Pick a seed first: click a suspect row or a dossier member."]));
      return;
    }
    const payload = await this.client.neighbors(
      this.state.run!, seed, this.neighborDepth, this.neighborCorrection);
    this.state.know(payload.neighbors.map((n) => n.investor));

    const depthSelect = el("select", {});
    for (const depth of [1, 2, 3]) {
      depthSelect.append(el("option", { value: String(depth) }, [String(depth)]));
    }
    depthSelect.value = String(this.neighborDepth);
    depthSelect.addEventListener("change", () => {
      this.neighborDepth = Number(depthSelect.value);
      void this.renderNeighbors();
    });

    const header = el("p", {}, [
      `Seed ${payload.seed} — ${payload.status} under ${payload.correction}`,
      el("label", {}, [" depth ", depthSelect]),
    ]);

    const offer = correctionSwitch(payload);
    const notice = el("div", { class: "notice" });
    if (offer) {
      const button = el("button", {}, [`switch to ${offer.to}`]);
      button.addEventListener("click", () => {
        this.neighborCorrection = offer.to;
        void this.renderNeighbors();
      });
      notice.append(offer.message, " ", button);
    }

    const cardsBox = el("div", { class: "cards" });
    for (const card of neighborCards(payload)) {
      const links = el("ul", {});
      for (const link of card.links) {
        links.append(el("li", {}, [
          `${link.type} with ${link.other}: ${link.sharedDays} shared days, ` +
          `p=${link.pvalue.toExponential(3)}`]));
      }
      const seedButton = el("button", {}, ["use as seed"]);
      seedButton.addEventListener("click", () => this.useAsSeed(card.investor));
      cardsBox.append(el("div", { class: "card" }, [
        el("h3", {}, [`${card.investor} (hop ${card.hop})`]),
        el("p", {}, [
          `directionality ${card.directionality === null ? "n/a"
            : card.directionality.toFixed(3)}, profit ` +
          `${card.profit === null ? "n/a" : card.profit.toFixed(2)}`]),
        links, seedButton]));
    }
    if (!payload.neighbors.length) {
      cardsBox.append(el("p", {}, [
        `No validated neighbors at depth ${payload.depth}.`]));
    }
    clear(this.main).append(header, notice, cardsBox);
  }

  private renderTrail(): void {
    const entries = this.state.seedTrail;
    clear(this.trailBar);
    this.trailBar.append(`Seed trail (${entries.length}): `);
    this.trailBar.append(entries.map((e) => e.investor).join(" → ") || "empty");
    const exportButton = el("button", {}, ["export case note"]);
    exportButton.addEventListener("click", () => {
      const blob = new Blob([this.state.exportTrail()],
                            { type: "application/json" });
      const link = el("a", {
        href: URL.createObjectURL(blob),
        download: `case_note_${this.state.run ?? "session"}.json`,
      });
      link.click();
      URL.revokeObjectURL(link.href);
    });
    this.trailBar.append(" ", exportButton);
  }
}

export function mount(root: HTMLElement, baseUrl?: string): Console {
  const params = new URLSearchParams(window.location.search);
  const base = baseUrl ?? params.get("api") ?? window.location.origin;
  const console_ = new Console(new ApiClient(base), root);
  void console_.start();
  return console_;
}
