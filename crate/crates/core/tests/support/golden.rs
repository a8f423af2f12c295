//! Canonical prompt fixtures and their expected renderings.

use adaptmt::prompting::{PromptKind, PromptRequest};
use adaptmt::retrieval::FuzzyMatch;
use adaptmt::terminology::TermPair;
use adaptmt::tm::{LanguagePair, Origin, PairId, SegmentPair};

pub struct GoldenCase {
    pub name: &'static str,
    pub request: PromptRequest,
    pub expected: &'static str,
}

fn fm(id: u64, source: &str, target: &str, score: f64) -> FuzzyMatch {
    FuzzyMatch {
        pair: SegmentPair {
            id: PairId(id),
            source: source.into(),
            target: target.into(),
            origin: Origin::Approved,
            created_at: chrono::DateTime::UNIX_EPOCH,
        },
        score,
    }
}

fn terms(pairs: &[(&str, &str)]) -> Vec<TermPair> {
    pairs.iter().map(|(s, t)| TermPair::new(s, t, 1)).collect()
}

pub fn cases() -> Vec<GoldenCase> {
    let en_ar = LanguagePair::new("en", "ar").unwrap();
    let en_zh = LanguagePair::new("en", "zh").unwrap();
    let en_es = LanguagePair::new("en", "es").unwrap();
    let en_fr = LanguagePair::new("en", "fr").unwrap();

    let ar_query = "The patient has a high fever.";
    // rank order: best first
    let ar_matches = vec![
        fm(1, "The patient has a fever.", "المريض يعاني من الحمى.", 0.91),
        fm(2, "The child has a high temperature.", "الطفل يعاني من ارتفاع في درجة الحرارة.", 0.78),
    ];
    let random_matches = vec![
        fm(7, "Vaccines are stored in cold rooms.", "تخزن اللقاحات في غرف باردة.", 0.31),
        fm(4, "Schools will reopen next month.", "ستعيد المدارس فتح أبوابها الشهر المقبل.", 0.12),
    ];

    let zh_query = "Wash your hands often.";
    let zh_matches = vec![
        fm(3, "Wash your hands with soap.", "用肥皂洗手。", 0.88),
        fm(5, "Cover your mouth when you cough.", "咳嗽时捂住嘴。", 0.74),
    ];
    let zh_mt = "经常洗你的手。";
    let zh_match_mt = vec!["用肥皂洗你的手。".to_string(), "当你咳嗽时盖住你的嘴。".to_string()];

    let es_query = "Symptoms of the coronavirus include fever and cough.";
    let es_matches = vec![
        fm(8, "Common symptoms include fever.", "Los síntomas comunes incluyen fiebre.", 0.86),
        fm(9, "A dry cough is common.", "La tos seca es común.", 0.71),
    ];
    let es_match_terms = vec![
        terms(&[("symptoms", "síntomas"), ("fever", "fiebre")]),
        terms(&[("dry cough", "tos seca")]),
    ];
    let glossary_terms = terms(&[("coronavirus", "coronavirus"), ("fever", "fiebre"), ("cough", "tos")]);
    let fuzzy_terms = terms(&[("symptoms", "síntomas"), ("fever", "fiebre"), ("cough", "tos")]);

    vec![
        GoldenCase {
            name: "zero_shot",
            request: PromptRequest::new(PromptKind::ZeroShot, en_ar.clone(), ar_query),
            expected: include_str!("../golden/prompts/zero_shot.txt"),
        },
        GoldenCase {
            name: "few_shot_fuzzy",
            request: PromptRequest::new(PromptKind::FewShotFuzzy, en_ar.clone(), ar_query).with_matches(ar_matches),
            expected: include_str!("../golden/prompts/few_shot_fuzzy.txt"),
        },
        GoldenCase {
            name: "few_shot_random",
            request: PromptRequest::new(PromptKind::FewShotRandom, en_ar, ar_query).with_matches(random_matches),
            expected: include_str!("../golden/prompts/few_shot_random.txt"),
        },
        GoldenCase {
            name: "few_shot_fuzzy_new_mt",
            request: PromptRequest::new(PromptKind::FewShotFuzzyNewMt, en_zh.clone(), zh_query)
                .with_matches(zh_matches.clone())
                .with_mt(zh_mt),
            expected: include_str!("../golden/prompts/few_shot_fuzzy_new_mt.txt"),
        },
        GoldenCase {
            name: "few_shot_fuzzy_all_mt",
            request: PromptRequest::new(PromptKind::FewShotFuzzyAllMt, en_zh, zh_query)
                .with_matches(zh_matches)
                .with_mt(zh_mt)
                .with_mt_matches(zh_match_mt),
            expected: include_str!("../golden/prompts/few_shot_fuzzy_all_mt.txt"),
        },
        GoldenCase {
            name: "zero_shot_glossary_terms",
            request: PromptRequest::new(PromptKind::ZeroShotGlossaryTerms, en_es.clone(), es_query)
                .with_terms(glossary_terms.clone()),
            expected: include_str!("../golden/prompts/zero_shot_glossary_terms.txt"),
        },
        GoldenCase {
            name: "few_shot_fuzzy_terms",
            request: PromptRequest::new(PromptKind::FewShotFuzzyTerms, en_es.clone(), es_query)
                .with_matches(es_matches.clone())
                .with_match_terms(es_match_terms.clone())
                .with_terms(fuzzy_terms),
            expected: include_str!("../golden/prompts/few_shot_fuzzy_terms.txt"),
        },
        GoldenCase {
            name: "few_shot_glossary_terms",
            request: PromptRequest::new(PromptKind::FewShotGlossaryTerms, en_es, es_query)
                .with_matches(es_matches)
                .with_match_terms(es_match_terms)
                .with_terms(glossary_terms),
            expected: include_str!("../golden/prompts/few_shot_glossary_terms.txt"),
        },
        GoldenCase {
            name: "term_extraction",
            request: PromptRequest::term_extraction(
                en_fr,
                "The fever lasted three days.",
                "La fièvre a duré trois jours.",
                5,
                "=",
                Default::default(),
            ),
            expected: include_str!("../golden/prompts/term_extraction.txt"),
        },
    ]
}
