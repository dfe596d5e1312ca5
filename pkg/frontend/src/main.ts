// Entry point.  The API base defaults to same-origin (the backend serves
// this bundle); ?api=http://host:port points at a remote backend instead.

import { App } from "./app.js";

const base = new URLSearchParams(window.location.search).get("api") ?? "";
const app = new App(base.replace(/\/+$/, ""));
void app.start();
