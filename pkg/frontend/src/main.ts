import "./style.css";
import { ApiClient } from "./api";
import { App } from "./app";

// Same-origin by default (the dev server proxies /runs to a local service);
// override with VITE_API_BASE to point at another host.
const base = import.meta.env.VITE_API_BASE ?? "";
const app = new App({ client: new ApiClient(base) });

document.querySelector<HTMLDivElement>("#app")?.append(app.element);
void app.start();
