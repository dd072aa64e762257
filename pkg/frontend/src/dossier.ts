/** Render model for a cluster dossier panel.
 *
 * Field values are the /dossier payload verbatim (numbers formatted for
 * display, never recomputed).
 */

import { DossierPayload } from "./types.js";

export interface DossierField {
  label: string;
  value: string;
}

export interface DossierView {
  title: string;
  fields: DossierField[];
  members: string[];
}

export function dossierView(payload: DossierPayload): DossierView {
  const types = Object.entries(payload.member_types)
    .map(([type, count]) => `${type}:${count}`)
    .join(" ");
  return {
    title: `Cluster ${payload.cluster}`,
    fields: [
      { label: "Members", value: String(payload.n_members) },
      { label: "Active in window", value: String(payload.n_active) },
      { label: "Member types", value: types },
      { label: "Cluster profit", value: payload.pi_c.toFixed(2) },
      { label: "Profit of active members", value: payload.pi_c_active.toFixed(2) },
      { label: "Rewarded fraction", value: payload.r_c.toFixed(3) },
      { label: "Offer price", value: payload.offer_price.toFixed(2) },
      { label: "Window", value: `${payload.ref_start} .. ${payload.ref_end}` },
    ],
    members: payload.members,
  };
}
