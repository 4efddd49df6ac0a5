//! Turning a parsed page into an ordered list of interactions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use url::Url;

use super::{AgentConfig, Credentials};
use crate::features::html::{Element, HtmlDoc};

/// A form ready to be sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormTarget {
    /// Resolved action URL.
    pub action: String,
    /// `GET` or `POST`.
    pub method: String,
    pub fields: Vec<(String, String)>,
}

impl FormTarget {
    pub fn encoded_fields(&self) -> String {
        url::form_urlencoded::Serializer::new(String::new()).extend_pairs(&self.fields).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Action {
    Login { form: FormTarget, user: String },
    Follow { url: String },
    Submit { form: FormTarget },
    Click { url: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    /// Candidates were left over when the budget ran out.
    Budget,
    /// Every candidate was planned.
    Depleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub actions: Vec<Action>,
    pub stop_reason: StopReason,
}

fn same_origin(a: &Url, b: &Url) -> bool {
    a.scheme() == b.scheme() && a.host_str() == b.host_str() && a.port_or_known_default() == b.port_or_known_default()
}

fn without_fragment(mut u: Url) -> Url {
    u.set_fragment(None);
    u
}

/// Resolves `href` against `base` and keeps it when it stays on the page's origin.
fn resolve(base: &Url, href: &str) -> Option<Url> {
    let href = href.trim();
    if href.is_empty() || href.starts_with('#') {
        return None;
    }
    let u = base.join(href).ok()?;
    (matches!(u.scheme(), "http" | "https") && same_origin(base, &u)).then(|| without_fragment(u))
}

fn input_type(e: &Element) -> String {
    e.attr("type").unwrap_or("text").trim().to_ascii_lowercase()
}

/// Value an agent types into a text-like field.
const FILLER_TEXT: &str = "flowlab";

fn collect_fields(doc: &HtmlDoc, form: usize, login: Option<(&str, &str)>) -> (Vec<(String, String)>, Option<String>) {
    let mut fields = Vec::new();
    let mut user_filled = None;
    for i in doc.descendants(form) {
        let e = &doc.elements[i];
        let Some(name) = e.attr("name").filter(|n| !n.is_empty()) else { continue };
        let value = match e.name.as_str() {
            "input" => {
                let t = input_type(e);
                match t.as_str() {
                    "submit" | "button" | "reset" | "image" | "file" => continue,
                    "checkbox" | "radio" if !e.has_attr("checked") => continue,
                    "checkbox" | "radio" => e.attr("value").unwrap_or("on").to_string(),
                    "hidden" => e.attr("value").unwrap_or_default().to_string(),
                    "password" => match login {
                        Some((_, pw)) => pw.to_string(),
                        None => e.attr("value").unwrap_or(FILLER_TEXT).to_string(),
                    },
                    _ => match login {
                        Some((user, _)) if user_filled.is_none() && matches!(t.as_str(), "text" | "email" | "tel") => {
                            user_filled = Some(user.to_string());
                            user.to_string()
                        }
                        _ => e.attr("value").filter(|v| !v.is_empty()).unwrap_or(FILLER_TEXT).to_string(),
                    },
                }
            }
            "textarea" => {
                let t = e.text.trim();
                if t.is_empty() { FILLER_TEXT.to_string() } else { t.to_string() }
            }
            "select" => {
                let opts: Vec<&Element> =
                    doc.descendants(i).into_iter().map(|j| &doc.elements[j]).filter(|o| o.name == "option").collect();
                match opts.iter().find(|o| o.has_attr("selected")).or(opts.first()) {
                    Some(o) => o.attr("value").unwrap_or_default().to_string(),
                    None => continue,
                }
            }
            _ => continue,
        };
        fields.push((name.to_string(), value));
    }
    (fields, user_filled)
}

fn form_target(doc: &HtmlDoc, form: usize, base: &Url, login: Option<(&str, &str)>) -> Option<(FormTarget, Option<String>)> {
    let e = &doc.elements[form];
    let action = match e.attr("action") {
        Some(a) if !a.trim().is_empty() => resolve(base, a)?,
        _ => without_fragment(base.clone()),
    };
    let method = if e.attr("method").is_some_and(|m| m.trim().eq_ignore_ascii_case("post")) { "POST" } else { "GET" };
    let (fields, user) = collect_fields(doc, form, login);
    Some((FormTarget { action: action.to_string(), method: method.into(), fields }, user))
}

fn has_password(doc: &HtmlDoc, form: usize) -> bool {
    doc.descendants(form).into_iter().any(|i| {
        let e = &doc.elements[i];
        e.name == "input" && input_type(e) == "password"
    })
}

/// Plans the interactions on one page.
///
/// A login comes first when some form has a password field. After it come
/// links, stand-alone buttons that carry a target and the other forms, in
/// document order. Follow targets are deduplicated and the page itself is
/// skipped. The plan is cut at the interaction budget.
pub fn plan_interaction(page: &HtmlDoc, base_url: &str, cfg: &AgentConfig, creds: &Credentials) -> ActionPlan {
    let mut candidates: Vec<Action> = Vec::new();
    let Ok(base) = Url::parse(base_url) else {
        return ActionPlan { actions: Vec::new(), stop_reason: StopReason::Depleted };
    };
    let base = without_fragment(base);
    let order = page.document_order();

    let login_form = order.iter().copied().find(|&i| page.elements[i].name == "form" && has_password(page, i));
    if let Some(f) = login_form {
        let (user, pw) = creds.for_host(base.host_str().unwrap_or_default());
        if let Some((form, filled)) = form_target(page, f, &base, Some((&user, &pw))) {
            candidates.push(Action::Login { form, user: filled.unwrap_or(user) });
        }
    }

    let mut seen: BTreeSet<String> = BTreeSet::new();
    seen.insert(base.to_string());
    for &i in &order {
        let e = &page.elements[i];
        match e.name.as_str() {
            "a" | "area" => {
                if let Some(u) = e.attr("href").and_then(|h| resolve(&base, h)) {
                    if seen.insert(u.to_string()) {
                        candidates.push(Action::Follow { url: u.to_string() });
                    }
                }
            }
            "button" | "input" if page.ancestor(i, "form").is_none() => {
                if e.name == "input" && !matches!(input_type(e).as_str(), "button" | "submit") {
                    continue;
                }
                let target = e.attr("formaction").or(e.attr("data-href"));
                if let Some(u) = target.and_then(|h| resolve(&base, h)) {
                    candidates.push(Action::Click { url: u.to_string() });
                }
            }
            "form" if Some(i) != login_form => {
                if let Some((form, _)) = form_target(page, i, &base, None) {
                    candidates.push(Action::Submit { form });
                }
            }
            _ => {}
        }
    }

    let stop_reason = if candidates.len() > cfg.interaction_budget { StopReason::Budget } else { StopReason::Depleted };
    candidates.truncate(cfg.interaction_budget);
    ActionPlan { actions: candidates, stop_reason }
}
