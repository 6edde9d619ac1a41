//! Bundled prompt texts against reference files, plus render determinism.

mod common;

use align_core::model::AttributeTarget;
use align_core::prompts::{render_user_prompt, TemplateRegistry};
use align_core::structured::build_schema;

const REFERENCE: [(&str, &str); 5] = [
    ("baseline-medical-triage", "baseline_medical_triage.txt"),
    ("baseline-opinion-survey", "baseline_opinion_survey.txt"),
    ("aligned-moral-desert-high", "aligned_moral_desert_high.txt"),
    ("aligned-moral-desert-low", "aligned_moral_desert_low.txt"),
    ("aligned-education-college", "aligned_education_college.txt"),
];

#[test]
fn reference_templates_are_byte_exact() {
    let templates = TemplateRegistry::bundled();
    for (id, file) in REFERENCE {
        let t = templates.get(id).unwrap_or_else(|| panic!("missing template {id}"));
        assert_eq!(t.body, common::golden(file), "{id}");
        assert!(!t.synthesized, "{id} is a reference text");
    }
}

#[test]
fn rendered_prompts_resolve_to_reference_texts() {
    let templates = TemplateRegistry::bundled();
    let attrs = common::registry();
    let s = common::thief_scenario();

    let base = templates.render_system_prompt(&attrs, "baseline", None, Some(&s)).unwrap();
    assert_eq!(base.text, common::golden("baseline_medical_triage.txt"));

    for (value, file) in [("high", "aligned_moral_desert_high.txt"), ("low", "aligned_moral_desert_low.txt")] {
        let t = AttributeTarget::new("moral_desert", value);
        let r = templates
            .render_system_prompt(&attrs, "prompt-aligned", Some(&t), Some(&s))
            .unwrap();
        assert_eq!(r.text, common::golden(file));
        assert!(r.warnings.is_empty());
    }

    let mut survey = common::scenario("q1", &["Yes", "No"], &[]);
    survey.domain = "opinion-survey".into();
    let r = templates.render_system_prompt(&attrs, "baseline", None, Some(&survey)).unwrap();
    assert_eq!(r.text, common::golden("baseline_opinion_survey.txt"));
    let t = AttributeTarget::new("EDUCATION", "College graduate/some postgrad");
    let r = templates
        .render_system_prompt(&attrs, "prompt-aligned", Some(&t), Some(&survey))
        .unwrap();
    assert_eq!(r.text, common::golden("aligned_education_college.txt"));
}

#[test]
fn every_valued_target_resolves() {
    let templates = TemplateRegistry::bundled();
    let attrs = common::registry();
    let s = common::thief_scenario();
    for attr in common::VALUED {
        let hi = templates
            .render_system_prompt(&attrs, "prompt-aligned", Some(&AttributeTarget::new(attr, "high")), Some(&s))
            .unwrap();
        let lo = templates
            .render_system_prompt(&attrs, "prompt-aligned", Some(&AttributeTarget::new(attr, "low")), Some(&s))
            .unwrap();
        assert_ne!(hi.text, lo.text, "{attr}");
        assert_ne!(hi.template_id, "aligned-default", "{attr}");
    }
}

#[test]
fn rendering_is_deterministic() {
    let templates = TemplateRegistry::bundled();
    let attrs = common::registry();
    let s = common::thief_scenario();
    let t = AttributeTarget::new("fairness", "low");
    let a = templates.render_system_prompt(&attrs, "prompt-aligned", Some(&t), Some(&s)).unwrap();
    let b = templates.render_system_prompt(&attrs, "prompt-aligned", Some(&t), Some(&s)).unwrap();
    assert_eq!(a, b);
    assert_eq!(render_user_prompt(&s), render_user_prompt(&s.clone()));
    assert_eq!(
        render_user_prompt(&s),
        "Context for car-thief.\n\nWho do you treat first?\n\n0. Treat the thief first\n1. Treat the bystander first"
    );
}

#[test]
fn baseline_ignores_target_with_warning() {
    let templates = TemplateRegistry::bundled();
    let attrs = common::registry();
    let s = common::thief_scenario();
    let r = templates
        .render_system_prompt(&attrs, "baseline", Some(&AttributeTarget::new("moral_desert", "high")), Some(&s))
        .unwrap();
    assert_eq!(r.text, common::golden("baseline_medical_triage.txt"));
    assert_eq!(r.warnings.len(), 1);
}

#[test]
fn decision_schema_golden() {
    let schema = build_schema(4).unwrap();
    assert_eq!(schema.schema_text(), common::golden("decision_schema_4.json").trim_end());
}
