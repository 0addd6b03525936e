//! Seeded generator for the bundled demo corpus: vocabulary, captions, mock
//! provider responses, leak-filter embeddings and a decode/eval set.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::decode::{ByteTokenizer, Tokenizer};
use crate::embedding::TrigramEmbedder;
use crate::eval::Split;
use crate::kb::{EntityVocabulary, VocabRow};
use crate::matching::{build_candidate_assignments, CaptionedImage};
use crate::pipeline::{CorpusRow, EmbeddingRow, GoldRow, PipelineConfig, QueryRow};
use crate::refine::{
    render_qa_prompt_with_proxy, render_verification_prompt, ProviderRequest, ScriptedProvider,
};

pub const DEMO_IMAGES: usize = 50;
pub const DEMO_QUERIES: usize = 16;
const MATCH_K: usize = 3;
const EMBED_DIM: usize = 16;

struct Entity {
    name: &'static str,
    summary: &'static str,
    category: &'static str,
    feature: &'static str,
    place: &'static str,
}

const fn e(
    name: &'static str,
    summary: &'static str,
    category: &'static str,
    feature: &'static str,
    place: &'static str,
) -> Entity {
    Entity {
        name,
        summary,
        category,
        feature,
        place,
    }
}

/// The first `IN_VOCAB` entries form the vocabulary; the rest only appear as
/// corrections.
const ENTITIES: &[Entity] = &[
    e("golden gate bridge", "The Golden Gate Bridge is a suspension bridge spanning the strait at the entrance to San Francisco Bay", "bridge", "international orange towers", "San Francisco"),
    e("tower bridge", "Tower Bridge is a combined bascule and suspension bridge over the River Thames in London", "bridge", "twin gothic towers joined by walkways", "London"),
    e("grosgrain", "Grosgrain is a ribbed fabric often used for ribbons", "fabric", "fine transverse ribs", "a craft store"),
    e("bronte baths", "Bronte Baths is an ocean pool cut into the rocks at Bronte Beach in Sydney", "swimming pool", "rock-edged pool beside breaking waves", "Sydney"),
    e("boeing 707", "The Boeing 707 is an early long-range narrow-body jet airliner", "airliner", "four engines slung under swept wings", "an airport apron"),
    e("airbus a380", "The Airbus A380 is a wide-body airliner with a full-length double deck", "airliner", "full-length upper deck windows", "a large airport"),
    e("oenothera speciosa", "Oenothera speciosa is a perennial evening primrose with pink cup-shaped flowers", "flower", "pale pink cup-shaped petals", "a meadow"),
    e("sunflower", "The sunflower is a tall annual plant with a large yellow flower head", "flower", "large yellow ray petals around a dark disc", "a farm field"),
    e("border collie", "The Border Collie is a herding dog breed from the Anglo-Scottish border", "dog breed", "black and white coat with an alert crouch", "a sheep pasture"),
    e("red panda", "The red panda is a small arboreal mammal native to the eastern Himalayas", "animal", "rusty fur and a ringed tail", "a mountain forest"),
    e("monarch butterfly", "The monarch butterfly is a milkweed butterfly known for its long migration", "insect", "orange wings with black veins", "a garden"),
    e("bald eagle", "The bald eagle is a bird of prey found in North America", "bird", "white head and hooked yellow beak", "a lakeshore"),
    e("eiffel tower", "The Eiffel Tower is a wrought-iron lattice tower on the Champ de Mars in Paris", "tower", "tapering iron lattice", "Paris"),
    e("colosseum", "The Colosseum is an elliptical amphitheatre in the centre of Rome", "amphitheatre", "tiers of stone arches", "Rome"),
    e("sydney opera house", "The Sydney Opera House is a performing arts centre with sail-shaped shells", "building", "white sail-like roof shells", "Sydney Harbour"),
    e("mount fuji", "Mount Fuji is an active stratovolcano and the highest mountain in Japan", "mountain", "snow-capped symmetrical cone", "Japan"),
    e("venus flytrap", "The Venus flytrap is a carnivorous plant with hinged trapping leaves", "plant", "toothed hinged leaf traps", "a bog"),
    e("taj mahal", "The Taj Mahal is a white marble mausoleum on the bank of the Yamuna river", "mausoleum", "white marble dome and minarets", "Agra"),
    e("great barrier reef", "The Great Barrier Reef is the largest coral reef system in the world", "reef", "shallow turquoise water over coral", "Queensland"),
    e("sagrada familia", "The Sagrada Familia is a basilica in Barcelona that has been under construction for over a century", "church", "ornate spires with sculpted facades", "Barcelona"),
    e("boeing 747", "The Boeing 747 is a wide-body airliner with a distinctive upper-deck hump", "airliner", "hump over the forward fuselage", "an airport"),
    e("gerbera daisy", "Gerbera is a genus of plants in the daisy family with large bright flower heads", "flower", "broad flat flower head with bright rays", "a florist"),
    e("manhattan bridge", "The Manhattan Bridge is a suspension bridge crossing the East River in New York City", "bridge", "blue steel towers over the river", "New York"),
    e("alaskan malamute", "The Alaskan Malamute is a large sled dog breed", "dog breed", "thick grey and white coat", "a snowy trail"),
];
const IN_VOCAB: usize = 20;

/// For the out-of-vocabulary entities: the vocabulary entity their captions
/// are written to resemble.
fn lookalike(i: usize) -> usize {
    match ENTITIES[i].name {
        "boeing 747" => 4,
        "gerbera daisy" => 7,
        "manhattan bridge" => 0,
        "alaskan malamute" => 8,
        _ => i,
    }
}

const CAPTION_TEMPLATES: &[&str] = &[
    "{n} on a clear afternoon",
    "close up of the {n}",
    "our trip to see the {n}",
    "{n} photographed at dusk",
    "a postcard view of {n}",
    "stock photo {n} high resolution",
];

const COLORS: &[&str] = &[
    "blue", "white", "green", "orange", "grey", "pink", "yellow", "red",
];

/// A generated fixture: relative path to file contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoFixture {
    pub files: BTreeMap<PathBuf, Vec<u8>>,
}

impl DemoFixture {
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        for (rel, bytes) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, bytes)?;
        }
        Ok(())
    }

    fn add_jsonl<T: Serialize>(&mut self, rel: &str, rows: &[T]) {
        let mut buf = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut buf, r).expect("row serializes");
            buf.push(b'\n');
        }
        self.files.insert(PathBuf::from(rel), buf);
    }

    fn add_text(&mut self, rel: &str, text: String) {
        self.files.insert(PathBuf::from(rel), text.into_bytes());
    }
}

pub const DEMO_CONFIG: &str = r#"# Demo pipeline configuration for the bundled fixture corpus.
seed = 7

[matching]
k = 3

[refine]
provider = "mock"
mock_dir = "mock"
retries = 2
in_flight = 4

[build]
shard_size = 40

[decode]
mode = "full_trie"
top = 10
"#;

enum Scenario {
    Validate,
    Correct(usize),
    BadVerification(&'static str),
    BadQa(&'static str),
}

fn caption_for(rng: &mut ChaCha8Rng, shown: &str) -> String {
    let t = CAPTION_TEMPLATES.choose(rng).expect("templates");
    t.replace("{n}", shown)
}

fn rationale(entity: &Entity) -> String {
    format!(
        "This image shows {}, typical of the {}.",
        entity.feature, entity.name
    )
}

fn qa_text(entity: &Entity, color: &str) -> String {
    format!(
        "Q: Which {} is pictured here? A: {}\nQ: What color stands out in the scene? A: {}\nQ: Where could this photo have been taken? A: {}\n",
        entity.category, entity.name, color, entity.place
    )
}

/// Builds the demo fixture deterministically from `seed`.
pub fn generate_demo(seed: u64) -> DemoFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fx = DemoFixture {
        files: BTreeMap::new(),
    };
    let config: PipelineConfig = toml::from_str(DEMO_CONFIG).expect("demo config parses");
    assert_eq!(config.matching.k, MATCH_K);

    let vocab_rows: Vec<VocabRow> = ENTITIES[..IN_VOCAB]
        .iter()
        .map(|e| VocabRow::new(e.name, e.summary))
        .collect();
    let vocab = EntityVocabulary::from_rows(vocab_rows.clone()).expect("demo vocab is valid");
    fx.add_jsonl("vocab.jsonl", &vocab_rows);
    fx.add_text("config.toml", DEMO_CONFIG.to_string());

    // Every entity gets at least two images; the rest are drawn at random.
    let mut truth: Vec<usize> = (0..ENTITIES.len()).chain(0..ENTITIES.len()).collect();
    while truth.len() < DEMO_IMAGES {
        truth.push(rng.gen_range(0..ENTITIES.len()));
    }
    truth.shuffle(&mut rng);

    let mut corpus = Vec::with_capacity(DEMO_IMAGES);
    for (i, &t) in truth.iter().enumerate() {
        // Captions of unknown entities and some noisy ones name a look-alike.
        let shown = if t >= IN_VOCAB {
            lookalike(t)
        } else if rng.gen_bool(0.2) {
            rng.gen_range(0..IN_VOCAB)
        } else {
            t
        };
        corpus.push(CorpusRow {
            image_id: format!("img-{i:03}"),
            caption: caption_for(&mut rng, ENTITIES[shown].name),
            image_ref: format!("images/img-{i:03}.jpg"),
            caption_proxy: (i % 10 == 9)
                .then(|| format!("a photo showing {}", ENTITIES[t].feature)),
        });
    }
    fx.add_jsonl("corpus.jsonl", &corpus);

    let images: Vec<CaptionedImage> = corpus
        .iter()
        .map(|c| CaptionedImage {
            image_id: c.image_id.clone(),
            caption: c.caption.clone(),
            image_ref: c.image_ref.clone(),
        })
        .collect();
    let embedder = TrigramEmbedder::new(config.matching.embedding_dim);
    let assignments = build_candidate_assignments(&vocab, &images, &embedder, MATCH_K)
        .expect("demo corpus matches");

    let mut mock = ScriptedProvider::new();
    let mut validated_ids = Vec::new();
    for a in &assignments {
        let idx: usize = a.image_id[4..].parse().expect("image id");
        let t = truth[idx];
        let cand = a.candidate_entity_id as usize;
        let proxy = corpus[idx].caption_proxy.as_deref();
        let image_ref = config.refine.send_image.then(|| a.image_ref.clone());
        let roll: f64 = rng.gen();
        let scenario = if t != cand {
            match roll {
                r if r < 0.9 => Scenario::Correct(t),
                _ => Scenario::BadVerification("NO, this is not it."),
            }
        } else {
            match roll {
                r if r < 0.84 => Scenario::Validate,
                r if r < 0.90 => Scenario::BadVerification("I cannot tell what this image shows."),
                r if r < 0.95 => Scenario::BadQa("Q: What is the main object in the image? A: a thing\nQ: Where is it? A: outside\nQ: What color is it? A: grey\n"),
                _ => Scenario::BadQa("Q: Is it daytime? A: yes\nQ: Is anyone there? A: no\n"),
            }
        };

        let entity = &ENTITIES[cand];
        let vprompt = render_verification_prompt(entity.name, entity.summary, &a.caption, proxy);
        let vreq = ProviderRequest::new(vprompt, image_ref.clone());
        let (final_entity, vtext) = match &scenario {
            Scenario::Validate | Scenario::BadQa(_) => {
                (entity, format!("YES {}", rationale(entity)))
            }
            Scenario::Correct(t) => {
                let te = &ENTITIES[*t];
                (te, format!("NO @{}@ {}", te.name, rationale(te)))
            }
            Scenario::BadVerification(text) => {
                mock.insert(&vreq, *text);
                continue;
            }
        };
        mock.insert(&vreq, vtext);
        let qprompt =
            render_qa_prompt_with_proxy(final_entity.name, &rationale(final_entity), proxy);
        let qreq = ProviderRequest::new(qprompt, image_ref);
        match scenario {
            Scenario::BadQa(text) => mock.insert(&qreq, text),
            _ => {
                let color = COLORS.choose(&mut rng).expect("colors");
                mock.insert(&qreq, qa_text(final_entity, color));
                if matches!(scenario, Scenario::Validate) {
                    validated_ids.push(idx);
                }
            }
        }
    }
    let mut keys: Vec<(String, String)> = mock
        .entries()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    keys.sort();
    for (k, v) in keys {
        fx.add_text(&format!("mock/{k}.txt"), v);
    }

    // Image embeddings: random unit-ish vectors; three evaluation images are
    // near-duplicates of training images and one is a moderate look-alike.
    let rand_vec = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        (0..EMBED_DIM)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect()
    };
    let record_vecs: Vec<Vec<f32>> = (0..DEMO_IMAGES).map(|_| rand_vec(&mut rng)).collect();
    let record_rows: Vec<EmbeddingRow> = record_vecs
        .iter()
        .enumerate()
        .map(|(i, v)| EmbeddingRow {
            id: format!("img-{i:03}"),
            vector: v.clone(),
        })
        .collect();
    fx.add_jsonl("record_embeddings.jsonl", &record_rows);
    let mut eval_rows = Vec::new();
    for (j, &idx) in validated_ids.iter().take(3).enumerate() {
        let v: Vec<f32> = record_vecs[idx]
            .iter()
            .map(|x| x + rng.gen_range(-0.01f32..0.01))
            .collect();
        eval_rows.push(EmbeddingRow {
            id: format!("eval-dup-{j}"),
            vector: v,
        });
    }
    if let Some(&idx) = validated_ids.get(3) {
        let noise = rand_vec(&mut rng);
        let v: Vec<f32> = record_vecs[idx]
            .iter()
            .zip(&noise)
            .map(|(x, n)| x + 0.6 * n)
            .collect();
        eval_rows.push(EmbeddingRow {
            id: "eval-near".into(),
            vector: v,
        });
    }
    for j in 0..8 {
        eval_rows.push(EmbeddingRow {
            id: format!("eval-{j}"),
            vector: rand_vec(&mut rng),
        });
    }
    fx.add_jsonl("eval_embeddings.jsonl", &eval_rows);

    add_decode_set(&mut fx, &mut rng);
    fx
}

/// Queries with a tabulated scorer that favours the gold entity's name for
/// most queries and a distractor for the rest.
fn add_decode_set(fx: &mut DemoFixture, rng: &mut ChaCha8Rng) {
    let tok = ByteTokenizer;
    let mut table: BTreeMap<(String, Vec<u32>), BTreeMap<u32, f64>> = BTreeMap::new();
    let boost = |table: &mut BTreeMap<(String, Vec<u32>), BTreeMap<u32, f64>>,
                 ctx: &str,
                 name: &str,
                 w: f64| {
        let mut toks = tok.encode(name);
        toks.push(tok.eos_id());
        for i in 0..toks.len() {
            let row = table
                .entry((ctx.to_string(), toks[..i].to_vec()))
                .or_default();
            *row.entry(toks[i]).or_insert(0.0) += w;
        }
    };
    let mut queries = Vec::new();
    let mut gold = Vec::new();
    for q in 0..DEMO_QUERIES {
        let id = format!("q{q:02}");
        let g = rng.gen_range(0..IN_VOCAB);
        let split = if g < IN_VOCAB / 2 {
            Split::Seen
        } else {
            Split::Unseen
        };
        if rng.gen_bool(0.6) {
            boost(&mut table, &id, ENTITIES[g].name, 3.0);
        } else {
            let mut d = rng.gen_range(0..IN_VOCAB);
            if d == g {
                d = (d + 1) % IN_VOCAB;
            }
            boost(&mut table, &id, ENTITIES[d].name, 3.0);
            boost(&mut table, &id, ENTITIES[g].name, 1.0);
        }
        queries.push(QueryRow {
            query_id: id.clone(),
            context: None,
        });
        gold.push(GoldRow {
            query_id: id,
            entity: ENTITIES[g].name.to_string(),
            split,
            question: "what is the main entity in this image?".into(),
        });
    }
    let entries: Vec<_> = table
        .into_iter()
        .map(|((ctx, prefix), row)| {
            json!({
                "context": ctx,
                "prefix": prefix,
                "logits": row.into_iter().collect::<Vec<_>>(),
            })
        })
        .collect();
    let scorer = json!({
        "vocab_size": tok.vocab_size(),
        "default_logit": 0.0,
        "entries": entries,
    });
    let mut text = serde_json::to_string(&scorer).expect("scorer serializes");
    text.push('\n');
    fx.add_text("scorer.json", text);
    fx.add_jsonl("queries.jsonl", &queries);
    fx.add_jsonl("gold.jsonl", &gold);
}
