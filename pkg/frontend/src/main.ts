import { HttpApi } from "./api.js";
import { StudioApp } from "./app.js";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}
const app = new StudioApp(new HttpApi(""), root);
app.render();
void app.init();
