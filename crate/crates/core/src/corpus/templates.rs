//! Utterance templates for the synthetic coffee-ordering corpus.
//!
//! Placeholders: `{v}` is a slot value, `{item}` a drink phrase, `{addr}` an
//! address. Lists are ordered by how often the generator picks them.

use rand::Rng;

/// Relative frequencies for paraphrase lists, most common first.
const PARAPHRASE_WEIGHTS: [f64; 4] = [0.4, 0.25, 0.2, 0.15];

pub fn pick<'a, R: Rng + ?Sized>(rng: &mut R, options: &[&'a str]) -> &'a str {
    let weights = &PARAPHRASE_WEIGHTS[..options.len().min(PARAPHRASE_WEIGHTS.len())];
    if options.len() > weights.len() {
        return options[rng.random_range(0..options.len())];
    }
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (opt, w) in options.iter().zip(weights) {
        if u < *w {
            return opt;
        }
        u -= w;
    }
    options[options.len() - 1]
}

/// Answer templates: users mostly give the bare value.
pub const USER_ANSWER_WEIGHTS: [f64; 3] = [0.85, 0.1, 0.05];

pub fn pick_weighted<'a, R: Rng + ?Sized>(rng: &mut R, options: &[&'a str], weights: &[f64]) -> &'a str {
    let total: f64 = weights.iter().take(options.len()).sum();
    let mut u = rng.random::<f64>() * total;
    for (opt, w) in options.iter().zip(weights) {
        if u < *w {
            return opt;
        }
        u -= w;
    }
    options[options.len().min(weights.len()) - 1]
}

pub fn pick_uniform<'a, R: Rng + ?Sized>(rng: &mut R, options: &[&'a str]) -> &'a str {
    options[rng.random_range(0..options.len())]
}

/// Agent phrasing is skewed toward a house style.
pub const AGENT_FORM_WEIGHTS: [f64; 8] = [0.4, 0.2, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05];

/// Openers human agents put in front of a question.
pub const AGENT_PREFIXES: &[&str] = &["", "ok ,", "sure ,", "got it ,", "alright ,", "thanks ,", "great ,", "no problem ,"];

pub fn agent_questions(slot: &str) -> Option<&'static [&'static str]> {
    Some(match slot {
        "taste" => &[
            "what would you like to drink ?",
            "what kind of coffee would you like ?",
            "which coffee do you want ?",
            "what coffee would you like to drink ?",
            "which drink would you like ?",
            "what flavor do you want ?",
            "what kind of drink do you want today ?",
            "which coffee would you like to order ?",
        ],
        "size" => &[
            "what size would you like ?",
            "tall , grande or venti ?",
            "which size do you want ?",
            "what cup size ?",
            "how big would you like it ?",
            "which cup size do you want ?",
            "small , medium or large ?",
            "and the size ?",
        ],
        "temperature" => &[
            "hot or cold ?",
            "would you like it hot or cold ?",
            "hot ?",
            "do you want it iced or hot ?",
            "iced or hot ?",
            "what temperature would you like ?",
            "do you want it warm or iced ?",
            "which temperature do you prefer ?",
        ],
        "address" => &[
            "where to send ?",
            "where should we deliver it ?",
            "what is your address ?",
            "where to deliver ?",
            "where should we send it ?",
            "could you tell me your address ?",
            "where do you want it ?",
            "what address should we deliver to ?",
        ],
        _ => return None,
    })
}

/// Agent repeating a detail back to the user.
pub const READ_BACKS: &[&str] = &["{v} , right ?", "so {v} ?", "{v} ?"];

pub const READ_BACK_REPLY: &str = "yes , {v} .";

pub const GENERIC_QUESTIONS: &[&str] = &[
    "what {slot} would you like ?",
    "which {slot} do you want ?",
    "please tell me the {slot} .",
    "what about the {slot} ?",
];

pub fn user_answers(slot: &str) -> &'static [&'static str] {
    match slot {
        "taste" => &["{v} .", "{v} please .", "i want a {v} ."],
        "size" => &["{v} .", "{v} please .", "{v} size ."],
        "temperature" => &["{v} .", "{v} please .", "i want it {v} ."],
        "address" => &["{v} .", "send to {v} .", "my address is {v} ."],
        _ => &["{v} .", "{v} please .", "i want {v} ."],
    }
}

pub const OPENINGS_EMPTY: &[&str] = &[
    "can you help me to order starbucks ?",
    "i want to order coffee .",
    "i'd like a cup of coffee .",
    "hi , i want some coffee .",
];

pub const OPENING_PREFIXES: &[&str] = &["i want", "i'd like", "can i get", "please order"];

pub const OPENING_ADDRESS: &[&str] = &[", send to {addr}", ". my address is {addr}", ", deliver to {addr}"];

pub const OPENING_ADDRESS_ONLY: &[&str] = &[
    "i want to order coffee , send to {addr} .",
    "i'd like coffee delivered to {addr} .",
    "can you order coffee to {addr} ?",
];

pub const CONFIRMATIONS: &[&str] = &[
    "your coffee order has been confirmed , please click to view details and pay .",
    "your order will be placed very soon . link for payment will be sent shortly .",
    "ok , your order has been confirmed , please click to pay .",
];

/// User reaction to a premature confirmation.
pub const INCOMPLETE_COMPLAINTS: &[&str] = &[
    "wait , my order is not complete .",
    "but i have not finished my order .",
    "wait , something is missing .",
];

pub const THANKS: &[&str] = &["ok , thanks .", "thank you .", "great , thanks ."];

pub const CLOSINGS: &[&str] = &["you are welcome .", "enjoy your coffee .", "thank you for your order ."];

/// Quick questions and the answers the agent gives; no slot content.
pub const FAQ: &[(&str, &[&str])] = &[
    ("how long will it take ?", &["usually about one hour .", "about <num> minutes ."]),
    ("how to pay ?", &["please click the link to pay .", "you can pay by clicking the link ."]),
    ("when will it arrive ?", &["it will arrive in about <num> minutes .", "usually about one hour ."]),
];

pub const NULL_REPLY: &str = "sorry ?";
