// Login screen and role routing. Tokens stay in memory only; a page reload
// returns to the login screen and every view rebuilds from the API alone.

import { ApiClient, ApiError } from "./api";
import { adminView } from "./admin";
import { customerView } from "./customer";

function baseUrl(): string {
  // served by the meterpipe service itself (at /ui) or a dev server proxy
  return window.location.origin;
}

function loginView(root: HTMLElement): void {
  root.replaceChildren();
  const heading = document.createElement("h2");
  heading.textContent = "meterpipe";
  const tokenInput = document.createElement("input");
  tokenInput.type = "password";
  tokenInput.placeholder = "access token";
  tokenInput.id = "token-input";
  const button = document.createElement("button");
  button.textContent = "Sign in";
  const message = document.createElement("p");
  message.className = "error";

  button.addEventListener("click", async () => {
    const api = new ApiClient(baseUrl(), tokenInput.value.trim());
    button.disabled = true;
    try {
      const role = await api.probeRole();
      if (role === "admin") {
        adminView(api, root);
      } else {
        customerView(api, root);
      }
    } catch (error) {
      message.textContent =
        error instanceof ApiError && error.status === 401
          ? "Token not recognized."
          : "Could not reach the service.";
      button.disabled = false;
    }
  });

  root.append(heading, tokenInput, button, message);
}

const root = document.getElementById("app");
if (root) loginView(root);
