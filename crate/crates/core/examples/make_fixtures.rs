//! Regenerates the toy fixtures shipped in `fixtures/`.
//!
//! ```text
//! cargo run -p sentedit-core --example make_fixtures -- fixtures
//! ```
//!
//! Domain A is restaurant-review-like, domain B encyclopedic; the two
//! share no word except the full stop. Every template slot draws from its
//! own word list, so the inserted and deleted words of an edit always say
//! which slot changed. The embedding file covers both domains, with words
//! of one slot clustered around a shared centroid.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const DIM: usize = 50;

type Slot = &'static [&'static str];

const A_SLOTS: &[Slot] = &[
    // dish
    &["pizza", "pasta", "burger", "salad", "soup", "steak", "sushi", "tacos", "curry", "noodles"],
    // taste
    &["great", "bland", "salty", "delicious", "cold", "fresh", "greasy", "tasty", "spicy", "soggy"],
    // staff
    &["waiters", "servers", "cooks", "hosts", "bartenders"],
    // manner
    &["friendly", "rude", "slow", "helpful", "polite", "busy", "attentive", "careless"],
    // place
    &["restaurant", "bar", "cafe", "diner", "bistro", "pub"],
    // price
    &["fair", "high", "low", "cheap", "steep"],
];

/// Templates over slot indices; `{k}` is slot `k`.
const A_TEMPLATES: &[&str] = &[
    "The {0} was {1} and the {2} were {3}.",
    "We ordered the {0} and it was {1}.",
    "The {4} is nice but the {0} is {1}.",
    "I loved the {0} here, the {2} were {3}.",
    "Prices at that {4} were {5} and the {2} were {3}.",
    "My {0} came {1} so we left the {4} early.",
];

const B_SLOTS: &[Slot] = &[
    // landform
    &["river", "mountain", "valley", "glacier", "forest", "lake", "plateau", "canyon", "marsh", "delta"],
    // monument
    &["castle", "cathedral", "bridge", "monastery", "fortress", "palace", "temple", "abbey", "tower", "aqueduct"],
    // quality
    &["ancient", "northern", "southern", "medieval", "coastal", "volcanic", "historic", "rural"],
    // verb
    &["borders", "overlooks", "surrounds", "shelters", "dominates"],
    // era
    &["first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth"],
    // people
    &["monks", "farmers", "merchants", "soldiers", "pilgrims", "settlers"],
];

const B_TEMPLATES_NATURE: &[&str] = &[
    "One {2} {0} {3} its {0}.",
    "This {2} {0} lies beside one old {0}.",
    "Its {0} became home to {5} during winter.",
    "Each {0} within this region {3} one {2} {0}.",
];

const B_TEMPLATES_HERITAGE: &[&str] = &[
    "One {2} {1} stood near its {1}.",
    "Its {1} rose during its {4} century.",
    "This {1} housed {5} during its {4} century.",
    "Each {1} within this region {3} one {2} {1}.",
];

fn fill(template: &str, slots: &[Slot], rng: &mut impl Rng) -> String {
    let mut out = String::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = rest[open..].find('}').expect("closed slot") + open;
        let k: usize = rest[open + 1..close].parse().expect("slot index");
        out.push_str(slots[k].choose(rng).expect("non-empty slot"));
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    out
}

fn unique_sentences(templates: &[&str], slots: &[Slot], n: usize, rng: &mut impl Rng) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = templates.choose(rng).expect("templates");
        let s = fill(t, slots, rng);
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

fn words_of(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn gaussian(rng: &mut impl Rng, scale: f64) -> Vec<f64> {
    (0..DIM)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            scale * x / (DIM as f64).sqrt()
        })
        .collect()
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir).expect("create fixture dir");
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);

    let domain_a = unique_sentences(A_TEMPLATES, A_SLOTS, 500, &mut rng);
    let nature = B_TEMPLATES_NATURE;
    let heritage = B_TEMPLATES_HERITAGE;
    let all_b: Vec<&str> = nature.iter().chain(heritage).copied().collect();
    let domain_b = unique_sentences(&all_b, B_SLOTS, 500, &mut rng);

    // labeled domain-B set; one line in ten carries the other label
    let mut classify = String::new();
    let labeled: Vec<(String, &str)> = {
        let mut lines = Vec::new();
        let nat = unique_sentences(nature, B_SLOTS, 150, &mut rng);
        let her = unique_sentences(heritage, B_SLOTS, 150, &mut rng);
        for (a, b) in nat.into_iter().zip(her) {
            lines.push((a, "nature"));
            lines.push((b, "heritage"));
        }
        lines
    };
    for (text, label) in &labeled {
        let label = if rng.random::<f64>() < 0.1 {
            if *label == "nature" { "heritage" } else { "nature" }
        } else {
            label
        };
        writeln!(classify, "{label}\t{text}").unwrap();
    }

    // clustered embeddings for every word of both domains
    let mut glove = String::new();
    let mut written = BTreeSet::new();
    let mut emit = |word: &str, centroid: &[f64], rng: &mut ChaCha8Rng, glove: &mut String| {
        if !written.insert(word.to_string()) {
            return;
        }
        let noise = gaussian(rng, 3.0);
        write!(glove, "{word}").unwrap();
        for (c, n) in centroid.iter().zip(noise) {
            write!(glove, " {:.5}", c + n).unwrap();
        }
        glove.push('\n');
    };
    for slot in A_SLOTS.iter().chain(B_SLOTS) {
        let centroid = gaussian(&mut rng, 3.0);
        for w in *slot {
            emit(w, &centroid, &mut rng, &mut glove);
        }
    }
    let zero = vec![0.0; DIM];
    let templates = A_TEMPLATES.iter().chain(nature).chain(heritage);
    let mut function_words: BTreeSet<String> = BTreeSet::new();
    for t in templates {
        let stripped: String = t.chars().map(|c| if c == '{' || c == '}' || c.is_ascii_digit() { ' ' } else { c }).collect();
        function_words.extend(words_of(&stripped));
    }
    for w in &function_words {
        emit(w, &zero, &mut rng, &mut glove);
    }
    emit(".", &zero, &mut rng, &mut glove);
    emit(",", &zero, &mut rng, &mut glove);

    let write = |name: &str, body: String| {
        std::fs::write(dir.join(name), body).expect("write fixture");
    };
    write("domain_a.txt", domain_a.join("\n") + "\n");
    write("domain_b.txt", domain_b.join("\n") + "\n");
    write("classify_b.tsv", classify);
    write("glove_toy.txt", glove);
}
