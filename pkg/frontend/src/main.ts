import { ViewerCore } from "./core.js";
import { HttpWorkbenchService } from "./service.js";
import { ViewerUI } from "./ui.js";

const service = new HttpWorkbenchService();
const core = new ViewerCore(service);
const ui = new ViewerUI(core, service);

ui.mount().catch((err) => {
  const status = document.getElementById("status");
  if (status) {
    status.textContent = `failed to load project: ${err}`;
  }
});
