/** Browser entry point: read connection settings, mount the app. */

import { ApiClient } from './api.js';
import { mountApp } from './ui.js';

function setting(key: string, promptText: string): string {
  let value = localStorage.getItem(key);
  if (!value) {
    value = window.prompt(promptText) ?? '';
    localStorage.setItem(key, value);
  }
  return value;
}

const baseUrl = setting('admitrag.baseUrl', 'Service base URL (e.g. http://127.0.0.1:8080)');
const token = setting('admitrag.token', 'API bearer token');
const raterId = setting('admitrag.raterId', 'Your rater id');

const root = document.getElementById('app');
if (!root) throw new Error('missing #app container');

const api = new ApiClient({ baseUrl, token });
mountApp(root, api, { raterId });
