//! ADM behavior through the uniform `choose_action` interface, using mock backends.

mod common;

use std::sync::Arc;

use align_core::adm::{choose_action, new_record, AdmContext, AdmRegistry, AdmSpec, DecisionMaker, KaleidoParams, KALEIDO};
use align_core::backend::{MockRule, MockScript};
use align_core::model::{AttributeTarget, Choice, DecisionOutput, DecisionRecord, Scenario};
use align_core::prompts::TemplateRegistry;
use align_core::runner::{run_experiment, Toolkit};
use async_trait::async_trait;

fn ctx() -> AdmContext {
    AdmContext::new(Arc::new(common::registry()), Arc::new(TemplateRegistry::bundled())).with_digest("d")
}

fn build(spec: &AdmSpec) -> Box<dyn DecisionMaker> {
    AdmRegistry::standard().build(spec, &ctx()).unwrap()
}

fn md(value: &str) -> AttributeTarget {
    AttributeTarget::new("moral_desert", value)
}

#[tokio::test]
async fn baseline_and_aligned_differ_only_in_system_prompt() {
    let s = common::thief_scenario();
    let base = build(&common::mock_adm("baseline", MockScript::always(0)));
    let aligned = build(&common::mock_adm("prompt-aligned", MockScript::always(0)));

    let b = choose_action(base.as_ref(), &s, None).await;
    let a = choose_action(aligned.as_ref(), &s, Some(&md("high"))).await;
    assert_eq!(b.user_prompt, a.user_prompt);
    assert_ne!(b.system_prompt, a.system_prompt);
    assert_eq!(b.system_prompt, common::golden("baseline_medical_triage.txt"));
    assert_eq!(a.system_prompt, common::golden("aligned_moral_desert_high.txt"));
    assert_eq!(b.decision.as_ref().unwrap().choice, 0);
    assert_eq!(a.target, Some(md("high")));
    assert_eq!(b.target, None);
}

#[tokio::test]
async fn aligned_prompt_steers_scripted_model() {
    let script = MockScript::rules(vec![
        MockRule::when_contains(
            "high emphasis on rewarding moral deservingness",
            r#"{"reasoning":"reward the innocent","choice":1}"#,
        ),
        MockRule::any(r#"{"reasoning":"most urgent first","choice":0}"#),
    ]);
    let adm = build(&common::mock_adm("prompt-aligned", script));
    let s = common::thief_scenario();
    let hi = choose_action(adm.as_ref(), &s, Some(&md("high"))).await;
    let lo = choose_action(adm.as_ref(), &s, Some(&md("low"))).await;
    assert_eq!(hi.chosen(), Some(1));
    assert_eq!(lo.chosen(), Some(0));
    assert!(s.label("moral_desert=high").unwrap().contains(&1));
    assert!(s.label("moral_desert=low").unwrap().contains(&0));
}

#[tokio::test]
async fn baseline_drops_target() {
    let adm = build(&common::mock_adm("baseline", MockScript::always(1)));
    let r = choose_action(adm.as_ref(), &common::thief_scenario(), Some(&md("high"))).await;
    assert!(r.target.is_none());
    assert_eq!(r.chosen(), Some(1));
}

#[tokio::test]
async fn aligned_without_target_is_configuration_error() {
    let adm = build(&common::mock_adm("prompt-aligned", MockScript::always(0)));
    assert!(adm.requires_target());
    let r = choose_action(adm.as_ref(), &common::thief_scenario(), None).await;
    assert_eq!(r.error.unwrap().kind, "configuration");
    assert!(r.decision.is_none());
}

#[tokio::test]
async fn unknown_target_is_configuration_error() {
    let adm = build(&common::mock_adm("prompt-aligned", MockScript::always(0)));
    let r = choose_action(adm.as_ref(), &common::thief_scenario(), Some(&AttributeTarget::new("bravery", "high"))).await;
    assert_eq!(r.error.unwrap().kind, "configuration");
}

#[tokio::test]
async fn prompt_override_is_flagged() {
    let adm = build(&common::mock_adm("prompt-aligned", MockScript::always(0)));
    let s = common::thief_scenario();
    let r = adm.choose_action(&s, &s.choices, Some(&md("low")), Some("Custom prompt.")).await;
    assert_eq!(r.system_prompt, "Custom prompt.");
    assert!(r.prompt_override);
    let plain = adm.choose_action(&s, &s.choices, Some(&md("low")), None).await;
    assert!(!plain.prompt_override);
    let json = serde_json::to_value(&plain).unwrap();
    assert!(json.get("prompt_override").is_none());
}

#[tokio::test]
async fn repair_then_success_counts_retries() {
    let script = MockScript::rules(vec![
        MockRule::on_attempt(0, "I think the second one."),
        MockRule::on_attempt(1, r#"{"reasoning":"","choice":1}"#),
        MockRule::any(r#"{"reasoning":"fixed","choice":1}"#),
    ]);
    let adm = build(&common::mock_adm("baseline", script));
    let r = choose_action(adm.as_ref(), &common::thief_scenario(), None).await;
    assert_eq!(r.retries, 2);
    assert_eq!(r.chosen(), Some(1));
    assert_eq!(r.raw_output, r#"{"reasoning":"fixed","choice":1}"#);
}

#[tokio::test]
async fn exhausted_retries_produce_error_record() {
    let adm = build(&common::mock_adm("baseline", MockScript::rules(vec![MockRule::any(r#"{"reasoning":"x","choice":7}"#)])));
    let r = choose_action(adm.as_ref(), &common::thief_scenario(), None).await;
    let err = r.error.unwrap();
    assert_eq!(err.kind, "exhausted_retries");
    assert_eq!(err.attempts.len(), 4);
    assert_eq!(r.retries, 3);
    assert!(r.decision.is_none());
}

#[tokio::test]
async fn unscripted_mock_is_backend_error() {
    let adm = build(&common::mock_adm("baseline", MockScript::rules(vec![MockRule::when_contains("never", "{}")])));
    let r = choose_action(adm.as_ref(), &common::thief_scenario(), None).await;
    assert!(r.error.unwrap().kind.starts_with("backend_"));
}

fn kaleido_spec(rules: Vec<MockRule>) -> AdmSpec {
    let mut spec = common::mock_adm(KALEIDO, MockScript::rules(rules));
    spec.kaleido = Some(KaleidoParams::default());
    spec
}

fn thief_assessor() -> Vec<MockRule> {
    vec![
        MockRule::when_contains(
            "Action: Treat the thief first",
            r#"{"relevance":0.9,"p_supports":0.1,"p_opposes":0.8,"p_either":0.1}"#,
        ),
        MockRule::any(r#"{"relevance":0.6,"p_supports":0.7,"p_opposes":0.2,"p_either":0.1}"#),
    ]
}

#[tokio::test]
async fn kaleido_follows_target_direction() {
    let adm = build(&kaleido_spec(thief_assessor()));
    let s = common::thief_scenario();
    let hi = choose_action(adm.as_ref(), &s, Some(&md("high"))).await;
    let lo = choose_action(adm.as_ref(), &s, Some(&md("low"))).await;
    assert_eq!(hi.chosen(), Some(1));
    assert_eq!(lo.chosen(), Some(0));
    assert_eq!(hi.assessments.len(), 2);
    assert!(hi.user_prompt.contains("\n\n---\n\n"));
    assert!(hi.user_prompt.contains("Value: "));
}

#[tokio::test]
async fn kaleido_without_target_is_configuration_error() {
    let adm = build(&kaleido_spec(thief_assessor()));
    let r = choose_action(adm.as_ref(), &common::thief_scenario(), None).await;
    assert_eq!(r.error.unwrap().kind, "configuration");
}

#[tokio::test]
async fn kaleido_rejects_unnormalized_assessment() {
    let adm = build(&kaleido_spec(vec![MockRule::any(
        r#"{"relevance":0.9,"p_supports":0.6,"p_opposes":0.6,"p_either":0.1}"#,
    )]));
    let r = choose_action(adm.as_ref(), &common::thief_scenario(), Some(&md("high"))).await;
    assert_eq!(r.error.unwrap().kind, "exhausted_retries");
}

/// A user-defined ADM that always picks the last choice.
struct LastChoice {
    spec: AdmSpec,
    ctx: AdmContext,
}

#[async_trait]
impl DecisionMaker for LastChoice {
    fn spec(&self) -> &AdmSpec {
        &self.spec
    }

    fn requires_target(&self) -> bool {
        false
    }

    async fn choose_action(
        &self,
        scenario: &Scenario,
        choices: &[Choice],
        target: Option<&AttributeTarget>,
        _prompt_override: Option<&str>,
    ) -> DecisionRecord {
        let mut r = new_record(&self.spec, &self.ctx, scenario, target);
        r.decision = Some(DecisionOutput {
            reasoning: "always the last option".into(),
            choice: choices.len() - 1,
        });
        r
    }
}

#[tokio::test]
async fn custom_adm_runs_through_the_runner() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = common::synthetic_dataset(5, 3);
    let path = common::write_dataset(dir.path(), &dataset);
    let mut kit = Toolkit::default();
    kit.adms.register("last-choice", |spec, ctx| {
        Ok(Box::new(LastChoice {
            spec: spec.clone(),
            ctx: ctx.clone(),
        }))
    });

    let spec = common::mock_adm("last-choice", MockScript::always(0));
    let cfg = common::config(&path, &dir.path().join("run.jsonl"), spec, None);
    let out = run_experiment(&cfg, &dataset, &kit).await.unwrap();
    assert_eq!(out.log.records.len(), 5);
    for (r, s) in out.log.records.iter().zip(&dataset.scenarios) {
        assert_eq!(r.chosen(), Some(s.choices.len() - 1));
        assert_eq!(r.adm_kind, "last-choice");
    }
}

#[tokio::test]
async fn unknown_kind_lists_registered() {
    let err = AdmRegistry::standard()
        .build(&common::mock_adm("oracle", MockScript::always(0)), &ctx())
        .err()
        .unwrap();
    let msg = err.to_string();
    assert!(msg.contains("oracle") && msg.contains("baseline") && msg.contains("kaleido"), "{msg}");
}
