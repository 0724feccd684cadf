export * from "./api.js";
export * from "./roiModel.js";
export * from "./session.js";
export * from "./readingView.js";
export * from "./roiView.js";
export { startApp } from "./main.js";
