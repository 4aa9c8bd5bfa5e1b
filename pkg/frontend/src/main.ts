/** Entry point: pick a tile from the service and open the viewer. */

import { ApiClient } from "./api.js";
import { TileViewer } from "./viewer.js";

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "http://127.0.0.1:8000";
  const client = new ApiClient(base);

  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");

  let tiles: string[];
  try {
    tiles = await client.listTiles();
  } catch (err) {
    root.textContent = `cannot reach annotation service at ${base}: ${err}`;
    return;
  }
  if (!tiles.length) {
    root.textContent = "service has no tiles";
    return;
  }

  const requested = params.get("tile");
  const tileId = requested && tiles.includes(requested) ? requested : tiles[0];

  const picker = document.getElementById("tile-picker");
  if (picker instanceof HTMLSelectElement) {
    for (const t of tiles) {
      const opt = document.createElement("option");
      opt.value = t;
      opt.textContent = t;
      opt.selected = t === tileId;
      picker.appendChild(opt);
    }
    picker.addEventListener("change", () => {
      const next = new URL(window.location.href);
      next.searchParams.set("tile", picker.value);
      window.location.href = next.toString();
    });
  }

  const viewer = new TileViewer(root, client, tileId);
  await viewer.start();
}

void boot();
