export * from "./types";
export * from "./api";
export * from "./viewState";
export * from "./history";
export * from "./render";
export { App, mount } from "./app";
