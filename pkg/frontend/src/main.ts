// Browser entry point. Wires the tested state modules (session, composer,
// schema forms, artifact parsing) to the DOM. All decisions about what an
// action means live in those modules or on the server; this file only
// translates events to method calls and state to elements.

import { ApiClient, ApiError } from "./api";
import { gridFromTable, heatColor, parseCsv, previewRows } from "./artifacts";
import { groupDiagnostics, PipelineDraft, RunMonitor } from "./composer";
import type { FormField } from "./schemaForm";
import { CanvasSession, PROVENANCE_STYLE } from "./session";
import type { Diagnostic, ProcessorManifest, Project, RunState } from "./types";

const api = new ApiClient("");

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className !== undefined) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function clear(node: HTMLElement): void {
  while (node.firstChild !== null) node.removeChild(node.firstChild);
}

// --- toasts ---

const toastBox = el("div", "toasts");

function showToast(kind: "info" | "error", text: string): void {
  const node = el("div", `toast toast-${kind}`, text);
  toastBox.appendChild(node);
  setTimeout(() => node.remove(), 6000);
}

function drainToasts(session: CanvasSession): void {
  for (const t of session.takeToasts()) showToast(t.kind, t.text);
}

// --- annotation tab ---

interface AnnotateTab {
  root: HTMLElement;
  refresh: () => Promise<void>;
}

function buildAnnotateTab(session: CanvasSession): AnnotateTab {
  const root = el("div", "tab-annotate");
  const bar = el("div", "toolbar");
  const canvas = el("canvas", "frame-canvas");
  canvas.width = 960;
  canvas.height = 600;
  canvas.tabIndex = 0;
  const sidebar = el("div", "sidebar");
  const proposalsBox = el("div", "proposals");
  const legend = el("div", "legend");

  const cameraSelect = el("select", "camera-select");
  for (const name of session.cameraNames) {
    const opt = el("option", undefined, name);
    opt.value = name;
    cameraSelect.appendChild(opt);
  }
  const partSelect = el("select", "part-select");
  for (const part of session.partOrder) {
    const opt = el("option", undefined, part);
    opt.value = part;
    partSelect.appendChild(opt);
  }
  const frameLabel = el("span", "frame-label");
  const unsavedBadge = el("span", "unsaved-badge", "unsaved edits");
  unsavedBadge.hidden = true;

  for (const [provenance, style] of Object.entries(PROVENANCE_STYLE)) {
    const item = el("span", "legend-item", provenance);
    item.style.borderBottom = `3px solid ${style.color}`;
    legend.appendChild(item);
  }

  bar.append(cameraSelect, partSelect, frameLabel, unsavedBadge, legend);

  const image = new Image();
  let imageReady = false;
  let interpolateAnchor: number | null = null;

  function draw(): void {
    const ctx = canvas.getContext("2d");
    if (ctx === null) return;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    if (imageReady) {
      const origin = session.imageToScreen(0, 0);
      ctx.drawImage(
        image,
        origin.x,
        origin.y,
        image.naturalWidth * session.zoom,
        image.naturalHeight * session.zoom,
      );
    } else {
      ctx.fillStyle = "#555";
      ctx.fillText("no frame available", 20, 20);
    }
    for (const marker of session.markers()) {
      const { x, y } = session.imageToScreen(marker.u, marker.v);
      ctx.strokeStyle = marker.style.color;
      ctx.fillStyle = marker.style.color;
      ctx.lineWidth = marker.pending ? 1 : 2;
      ctx.beginPath();
      if (marker.style.shape === "circle") {
        ctx.arc(x, y, 5, 0, Math.PI * 2);
      } else if (marker.style.shape === "diamond") {
        ctx.moveTo(x, y - 6);
        ctx.lineTo(x + 6, y);
        ctx.lineTo(x, y + 6);
        ctx.lineTo(x - 6, y);
        ctx.closePath();
      } else {
        ctx.moveTo(x - 5, y - 5);
        ctx.lineTo(x + 5, y + 5);
        ctx.moveTo(x - 5, y + 5);
        ctx.lineTo(x + 5, y - 5);
      }
      ctx.stroke();
      ctx.fillText(marker.part, x + 8, y - 8);
    }
  }

  function renderProposals(): void {
    clear(proposalsBox);
    const pending = session.pendingProposals();
    if (pending.length === 0) {
      proposalsBox.appendChild(el("p", "hint", "no proposals on this frame"));
      return;
    }
    const acceptAll = el("button", undefined, `accept all (${pending.length})`);
    acceptAll.addEventListener("click", () => {
      void session.acceptAllProposals().then(sync);
    });
    proposalsBox.appendChild(acceptAll);
    for (const p of pending) {
      const row = el("div", "proposal-row");
      row.appendChild(
        el("span", undefined, `${p.camera} ${p.part} (residual ${p.residual.toFixed(2)})`),
      );
      const accept = el("button", undefined, "accept");
      accept.addEventListener("click", () => {
        void session.acceptProposal(p.camera, p.part).then(sync);
      });
      const reject = el("button", undefined, "reject");
      reject.addEventListener("click", () => {
        void session.rejectProposal(p.camera, p.part).then(sync);
      });
      row.append(accept, reject);
      proposalsBox.appendChild(row);
    }
  }

  async function sync(): Promise<void> {
    frameLabel.textContent = `frame ${session.frame}`;
    cameraSelect.value = session.camera;
    partSelect.value = session.selectedPart;
    unsavedBadge.hidden = !session.hasUnsaved();
    imageReady = false;
    image.onload = () => {
      imageReady = true;
      draw();
    };
    image.onerror = () => {
      imageReady = false;
      draw();
    };
    image.src = api.frameUrl(session.camera, session.frame);
    renderProposals();
    drainToasts(session);
    draw();
  }

  cameraSelect.addEventListener("change", () => {
    void session.switchCamera(cameraSelect.value).then(sync);
  });
  partSelect.addEventListener("change", () => {
    session.selectPart(partSelect.value);
    void sync();
  });

  canvas.addEventListener("click", (ev) => {
    const box = canvas.getBoundingClientRect();
    void session.placePoint(ev.clientX - box.left, ev.clientY - box.top).then(sync);
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    const box = canvas.getBoundingClientRect();
    session.zoomAt(ev.deltaY < 0 ? 1.2 : 1 / 1.2, ev.clientX - box.left, ev.clientY - box.top);
    draw();
  });

  // Keyboard map (documented in the README):
  //   arrows step frames, shift+arrows jump 10, q/e cycle the part,
  //   c cycles the camera, i marks/runs an interpolation span,
  //   r asks for reprojection proposals, a accepts them all,
  //   x discards unsaved edits, 0 resets the view.
  canvas.addEventListener("keydown", (ev) => {
    const step = ev.shiftKey ? 10 : 1;
    switch (ev.key) {
      case "ArrowRight":
        void session.stepFrame(step).then(sync);
        break;
      case "ArrowLeft":
        void session.stepFrame(-step).then(sync);
        break;
      case "q":
        session.cyclePart(-1);
        void sync();
        break;
      case "e":
        session.cyclePart(1);
        void sync();
        break;
      case "c": {
        const names = session.cameraNames;
        const next = names[(names.indexOf(session.camera) + 1) % names.length];
        void session.switchCamera(next).then(sync);
        break;
      }
      case "i":
        if (interpolateAnchor === null) {
          interpolateAnchor = session.frame;
          showToast("info", `interpolation start: frame ${interpolateAnchor}`);
        } else {
          const a = interpolateAnchor;
          interpolateAnchor = null;
          void session.interpolateRange(Math.min(a, session.frame), Math.max(a, session.frame))
            .then(sync);
        }
        break;
      case "r":
        void session.requestProposals().then(sync);
        break;
      case "a":
        void session.acceptAllProposals().then(sync);
        break;
      case "x":
        session.discardEdits();
        void sync();
        break;
      case "0":
        session.resetView();
        draw();
        break;
      default:
        return;
    }
    ev.preventDefault();
  });

  sidebar.append(el("h2", undefined, "proposals"), proposalsBox);
  const stage = el("div", "stage");
  stage.append(canvas, sidebar);
  root.append(bar, stage);
  return { root, refresh: sync };
}

// --- pipeline tab ---

function fieldInput(field: FormField, onChange: (value: string) => void): HTMLElement {
  if (field.kind === "select") {
    const select = el("select");
    for (const variant of field.variants) {
      const opt = el("option", undefined, variant);
      opt.value = variant;
      select.appendChild(opt);
    }
    select.value = field.value;
    select.addEventListener("change", () => onChange(select.value));
    return select;
  }
  if (field.kind === "toggle") {
    const input = el("input");
    input.type = "checkbox";
    input.checked = field.value === "true";
    input.addEventListener("change", () => onChange(input.checked ? "true" : "false"));
    return input;
  }
  const input = el("input");
  input.type = field.kind === "number" ? "number" : "text";
  if (field.step !== null) input.step = field.step;
  input.value = field.value;
  input.addEventListener("input", () => onChange(input.value));
  return input;
}

interface PipelineTab {
  root: HTMLElement;
  refresh: () => Promise<void>;
}

function buildPipelineTab(registry: ProcessorManifest[]): PipelineTab {
  const root = el("div", "tab-pipelines");
  let draft = new PipelineDraft(registry);
  let diagnostics: Diagnostic[] = [];

  const paletteBox = el("div", "palette");
  const cardsBox = el("div", "stage-cards");
  const headerBox = el("div", "draft-header");
  const savedBox = el("div", "saved-list");
  const runBox = el("div", "run-report");

  const idInput = el("input");
  idInput.placeholder = "pipeline id";
  idInput.value = "draft";
  const nameInput = el("input");
  nameInput.placeholder = "name";
  const sourceInput = el("input");
  sourceInput.placeholder = "source path";
  const sinkInput = el("input");
  sinkInput.placeholder = "sink path";
  nameInput.addEventListener("input", () => (draft.name = nameInput.value));
  sourceInput.addEventListener("input", () => (draft.source = sourceInput.value));
  sinkInput.addEventListener("input", () => (draft.sink = sinkInput.value));

  const saveButton = el("button", undefined, "save");
  const runButton = el("button", undefined, "save + run");
  headerBox.append(idInput, nameInput, sourceInput, sinkInput, saveButton, runButton);

  function renderPalette(): void {
    clear(paletteBox);
    let category = "";
    for (const manifest of draft.palette()) {
      if (manifest.category !== category) {
        category = manifest.category;
        paletteBox.appendChild(el("h3", undefined, category));
      }
      const add = el("button", "palette-item", manifest.id);
      add.title = `${manifest.input_kind} -> ${manifest.output_kind}`;
      add.addEventListener("click", () => {
        draft.addStage(manifest.id);
        renderCards();
      });
      paletteBox.appendChild(add);
    }
  }

  function renderCards(): void {
    clear(cardsBox);
    const grouped = groupDiagnostics(diagnostics);
    const global = grouped.get(-1) ?? [];
    for (const message of global) {
      cardsBox.appendChild(el("p", "diagnostic", message));
    }
    draft.stageCards().forEach((card, index) => {
      const box = el("div", "stage-card");
      const title = el("div", "stage-title", `${index}. ${card.manifest.id}`);
      const up = el("button", undefined, "up");
      up.addEventListener("click", () => {
        draft.moveStage(index, index - 1);
        renderCards();
      });
      const down = el("button", undefined, "down");
      down.addEventListener("click", () => {
        draft.moveStage(index, index + 1);
        renderCards();
      });
      const remove = el("button", undefined, "remove");
      remove.addEventListener("click", () => {
        draft.removeStage(index);
        renderCards();
      });
      title.append(up, down, remove);
      box.appendChild(title);
      for (const field of card.form.fields) {
        const row = el("label", "param-row");
        row.appendChild(
          el("span", "param-label", field.required ? `${field.label} *` : field.label),
        );
        row.appendChild(fieldInput(field, (value) => draft.setParam(index, field.name, value)));
        box.appendChild(row);
      }
      for (const message of grouped.get(index) ?? []) {
        box.appendChild(el("p", "diagnostic", message));
      }
      cardsBox.appendChild(box);
    });
  }

  function renderRun(state: RunState): void {
    clear(runBox);
    runBox.appendChild(el("h3", undefined, `run ${state.id}: ${state.status}`));
    if (state.error !== null) {
      runBox.appendChild(el("p", "diagnostic", `${state.error.code}: ${state.error.message}`));
    }
    if (state.report === null) return;
    for (const stage of state.report.stages) {
      const row = el("div", "report-row");
      row.appendChild(
        el(
          "span",
          undefined,
          `${stage.index}. ${stage.processor}: ${stage.items} items, ` +
            `${stage.wall_time_s.toFixed(3)}s`,
        ),
      );
      const preview = el("button", undefined, `preview ${stage.artifact}`);
      preview.addEventListener("click", () => {
        void api.getArtifact(state.id, stage.index).then(
          (text) => renderArtifact(stage.artifact, text),
          (err) => showToast("error", describeError(err)),
        );
      });
      row.appendChild(preview);
      runBox.appendChild(row);
    }
  }

  function renderArtifact(name: string, text: string): void {
    const existing = runBox.querySelector(".artifact-preview");
    existing?.remove();
    const box = el("div", "artifact-preview");
    box.appendChild(el("h4", undefined, name));
    const table = parseCsv(text);
    const grid = gridFromTable(table);
    if (grid !== null && grid.xs.length > 1 && grid.ys.length > 1) {
      const canvas = el("canvas");
      canvas.width = grid.xs.length * 12;
      canvas.height = grid.ys.length * 12;
      const ctx = canvas.getContext("2d");
      if (ctx !== null) {
        const span = grid.max - grid.min;
        grid.values.forEach((column, i) => {
          column.forEach((value, j) => {
            ctx.fillStyle = heatColor(span === 0 ? 0 : (value - grid.min) / span);
            ctx.fillRect(i * 12, (grid.ys.length - 1 - j) * 12, 12, 12);
          });
        });
      }
      box.appendChild(canvas);
    } else {
      const tableNode = el("table", "preview-table");
      const head = el("tr");
      for (const column of table.header) head.appendChild(el("th", undefined, column));
      tableNode.appendChild(head);
      for (const row of previewRows(table, 12)) {
        const tr = el("tr");
        for (const cell of row) tr.appendChild(el("td", undefined, cell));
        tableNode.appendChild(tr);
      }
      box.appendChild(tableNode);
    }
    runBox.appendChild(box);
  }

  async function refreshSaved(): Promise<void> {
    clear(savedBox);
    const pipelines = await api.listPipelines();
    for (const saved of pipelines) {
      const row = el("div", "saved-row");
      row.appendChild(el("span", undefined, saved.id));
      const load = el("button", undefined, "load");
      load.addEventListener("click", () => {
        draft = PipelineDraft.fromConfig(registry, saved.config);
        diagnostics = saved.diagnostics;
        idInput.value = saved.id;
        nameInput.value = draft.name;
        sourceInput.value = draft.source;
        sinkInput.value = draft.sink;
        renderCards();
      });
      row.appendChild(load);
      savedBox.appendChild(row);
    }
  }

  async function saveDraft(): Promise<boolean> {
    const result = await draft.save(api, idInput.value);
    diagnostics = result.diagnostics;
    renderCards();
    if (!result.saved) {
      showToast("error", `not saved: ${result.diagnostics.length} problems`);
      return false;
    }
    showToast("info", `saved ${result.id}`);
    await refreshSaved();
    return true;
  }

  saveButton.addEventListener("click", () => {
    void saveDraft().catch((err) => showToast("error", describeError(err)));
  });
  runButton.addEventListener("click", () => {
    void (async () => {
      if (!(await saveDraft())) return;
      const monitor = new RunMonitor(api);
      const final = await monitor.run(idInput.value, renderRun);
      showToast(final.status === "done" ? "info" : "error", `run ${final.status}`);
    })().catch((err) => showToast("error", describeError(err)));
  });

  renderPalette();
  renderCards();
  root.append(
    headerBox,
    el("h2", undefined, "processors"),
    paletteBox,
    el("h2", undefined, "stages"),
    cardsBox,
    el("h2", undefined, "saved pipelines"),
    savedBox,
    runBox,
  );
  return { root, refresh: refreshSaved };
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  if (err instanceof Error) return err.message;
  return String(err);
}

// --- bootstrap ---

async function start(): Promise<void> {
  const app = document.getElementById("app");
  if (app === null) return;
  let project: Project;
  let registry: ProcessorManifest[];
  try {
    [project, registry] = await Promise.all([api.getProject(), api.getProcessors()]);
  } catch (err) {
    app.appendChild(el("p", "diagnostic", `service unreachable: ${describeError(err)}`));
    return;
  }

  const session = new CanvasSession(api, project);
  const annotate = buildAnnotateTab(session);
  const pipelines = buildPipelineTab(registry);

  const nav = el("div", "tabs");
  const annotateButton = el("button", undefined, "annotate");
  const pipelineButton = el("button", undefined, "pipelines");
  nav.append(annotateButton, pipelineButton);

  function show(which: "annotate" | "pipelines"): void {
    annotate.root.hidden = which !== "annotate";
    pipelines.root.hidden = which !== "pipelines";
  }
  annotateButton.addEventListener("click", () => show("annotate"));
  pipelineButton.addEventListener("click", () => show("pipelines"));

  app.append(nav, annotate.root, pipelines.root, toastBox);
  document.title = `${project.name} - posekit`;
  show("annotate");
  await session.refresh();
  await annotate.refresh();
  await pipelines.refresh();
}

void start();
