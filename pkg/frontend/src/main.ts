/** Browser entry point: mount the app on #app.
 *
 * The API origin defaults to same-origin; a ?api=<origin> query
 * parameter overrides it for development against a separately hosted
 * study service.
 */

import { ApiClient } from "./api.js";
import { App } from "./app.js";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app mount point");
}
const apiBase = new URLSearchParams(window.location.search).get("api") ?? "";
const app = new App(root, new ApiClient(apiBase));
void app.start();
