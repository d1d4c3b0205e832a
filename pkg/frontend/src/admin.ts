// Admin flow: filter readings by customer, page through the audit table,
// and watch the ledger status panel.

import { ApiClient, ReadingRow } from "./api";
import { clampPage, formatGeo, formatTimestamp, pageCount } from "./state";

const PAGE_SIZE = 10;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

export function adminView(api: ApiClient, root: HTMLElement): void {
  let page = 1;
  let total = 0;
  let customerFilter: string | null = null;

  root.replaceChildren();
  const heading = el("h2", {}, "Reading audit");
  const filterInput = el("input", { id: "customer-filter", placeholder: "customer id" });
  const filterButton = el("button", {}, "Filter");
  const statusPanel = el("p", { id: "ledger-panel" }, "ledger: loading...");
  const table = el("table", { id: "audit-table" });
  const emptyState = el("p", { id: "empty-state", class: "hidden" }, "No readings yet.");
  const prevButton = el("button", {}, "Prev");
  const nextButton = el("button", {}, "Next");
  const pageLabel = el("span", { id: "page-label" });

  async function thumbnail(row: ReadingRow): Promise<HTMLElement> {
    const img = el("img", { width: "96", alt: `meter ${row.meter_id}` });
    try {
      img.src = URL.createObjectURL(await api.imageBlob(row.image_url));
    } catch {
      return el("span", {}, "(image unavailable)");
    }
    return img;
  }

  async function refreshStatus(): Promise<void> {
    try {
      const status = await api.ledgerStatus();
      statusPanel.textContent = `ledger: height ${status.height}, ${status.tx_count} committed txs`;
    } catch {
      statusPanel.textContent = "ledger: status unavailable";
    }
  }

  async function load(): Promise<void> {
    const pageData = await api.adminReadings(customerFilter, page, PAGE_SIZE);
    total = pageData.total;
    page = clampPage(pageData.page, total, PAGE_SIZE);
    pageLabel.textContent = `page ${page} / ${pageCount(total, PAGE_SIZE)} (${total} readings)`;
    prevButton.disabled = page <= 1;
    nextButton.disabled = page >= pageCount(total, PAGE_SIZE);
    emptyState.classList.toggle("hidden", total > 0);

    const header = el("tr");
    for (const col of ["image", "customer", "meter", "reading", "when", "geo", "source", "height"]) {
      header.append(el("th", {}, col));
    }
    const rows = await Promise.all(
      pageData.records.map(async (row) => {
        const tr = el("tr");
        const imgCell = el("td");
        imgCell.append(await thumbnail(row));
        tr.append(
          imgCell,
          el("td", {}, row.customer_id ?? "?"),
          el("td", {}, row.meter_id),
          el("td", {}, row.reading),
          el("td", {}, formatTimestamp(row.timestamp)),
          el("td", {}, formatGeo(row.geo)),
          el("td", {}, row.source),
          el("td", {}, String(row.ledger_height)),
        );
        return tr;
      }),
    );
    table.replaceChildren(header, ...rows);
  }

  filterButton.addEventListener("click", () => {
    customerFilter = filterInput.value.trim() || null;
    page = 1;
    void load();
  });
  prevButton.addEventListener("click", () => {
    page = clampPage(page - 1, total, PAGE_SIZE);
    void load();
  });
  nextButton.addEventListener("click", () => {
    page = clampPage(page + 1, total, PAGE_SIZE);
    void load();
  });

  root.append(heading, statusPanel, filterInput, filterButton, table, emptyState, prevButton, pageLabel, nextButton);
  void refreshStatus();
  void load();
}
