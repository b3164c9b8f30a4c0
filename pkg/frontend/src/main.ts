import { ApiClient } from "./api.js";
import { Player } from "./player.js";
import { AnnotationApp } from "./state.js";
import { mount, setRetryHook } from "./view.js";

function annotatorId(): string {
    const stored = window.localStorage.getItem("voclab_annotator_id");
    if (stored) {
        return stored;
    }
    const entered = window.prompt("Pick an annotator name:")?.trim();
    const id = entered && entered.length > 0 ? entered : `anon-${Date.now()}`;
    window.localStorage.setItem("voclab_annotator_id", id);
    return id;
}

const api = new ApiClient(annotatorId());
const app = new AnnotationApp(api);
const player = new Player();

const root = document.getElementById("app");
if (!root) {
    throw new Error("missing #app container");
}
mount(root, app, player);
setRetryHook(() => app.retryQualification());
void app.start();
