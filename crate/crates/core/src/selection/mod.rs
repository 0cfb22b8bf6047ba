//! Few-shot exemplar selection: question similarity (QTS), masked
//! full-information similarity (FIS) and model-chosen exemplars (Auto).

mod embed;
mod mask;
mod pool;

use rand::seq::index;
use rand::Rng;

pub use embed::{tokens, CachedEmbedder, Embedder, Embedding, HashedEmbedder, LiveEmbedder, HASHED_DIM};
pub use mask::{mask_for_fis, mask_query, mask_question, mask_target, schema_text, MaskedInstance, COL_MARK, TABLE_MARK, VAL_MARK};
pub use pool::{ExamplePool, FisEmbeddings, PoolEntry};

use crate::error::{Error, Result};
use crate::llm::{ChatRequest, Gateway, Message, Role};
use crate::model::DatabaseSchema;
use crate::prompt::{schema_ddl, Templates};

fn check_k(pool: &ExamplePool, k: usize) -> Result<()> {
    if k > pool.len() {
        return Err(Error::Precondition(format!("asked for {k} examples from a pool of {}", pool.len())));
    }
    Ok(())
}

/// Indices of the `k` highest scores, ties broken by lower index.
fn top_k(scores: Vec<f32>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// The `k` entries whose questions are most similar to `question`.
pub fn select_qts(pool: &ExamplePool, question: &Embedding, k: usize) -> Result<Vec<usize>> {
    check_k(pool, k)?;
    let scores = pool.entries.iter().map(|e| e.question_embedding.cosine(question)).collect();
    Ok(top_k(scores, k))
}

/// The `k` entries with the highest combined masked-artifact similarity.
pub fn select_fis(pool: &ExamplePool, target: &FisEmbeddings, k: usize) -> Result<Vec<usize>> {
    check_k(pool, k)?;
    let scores = pool.entries.iter().map(|e| e.fis.combined(target)).collect();
    Ok(top_k(scores, k))
}

/// Draws `count` entries spread evenly over the difficulty buckets; a
/// bucket too small to fill its share passes the remainder on.
pub fn stratified_sample<R: Rng + ?Sized>(pool: &ExamplePool, count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if count > pool.len() {
        return Err(Error::Precondition(format!("cannot draw {count} candidates from a pool of {}", pool.len())));
    }
    let buckets = pool.buckets();
    let mut quota: Vec<usize> = (0..4).map(|d| count / 4 + usize::from(d < count % 4)).collect();
    let mut leftover = 0;
    for d in 0..4 {
        if quota[d] > buckets[d].len() {
            leftover += quota[d] - buckets[d].len();
            quota[d] = buckets[d].len();
        }
    }
    while leftover > 0 {
        for d in 0..4 {
            if leftover > 0 && quota[d] < buckets[d].len() {
                quota[d] += 1;
                leftover -= 1;
            }
        }
    }
    let mut out = Vec::with_capacity(count);
    for d in 0..4 {
        let mut picked: Vec<usize> = index::sample(rng, buckets[d].len(), quota[d])
            .into_iter()
            .map(|i| buckets[d][i])
            .collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    Ok(out)
}

/// Outcome of a model-driven selection.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoSelection {
    /// Chosen pool indices, in the model's order.
    pub indices: Vec<usize>,
    /// Pool indices shown to the model.
    pub candidates: Vec<usize>,
    pub transcript_refs: Vec<String>,
}

/// Parses a reply such as `2, 4` into 1-based choices. `None` when the
/// reply does not name `k` distinct numbers.
pub fn parse_choice_list(reply: &str, k: usize) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    for n in reply.split(|c: char| !c.is_ascii_digit()).filter(|s| !s.is_empty()) {
        let n: usize = n.parse().ok()?;
        if !out.contains(&n) {
            out.push(n);
        }
        if out.len() == k {
            return Some(out);
        }
    }
    None
}

/// Shows the model a stratified random sample of the pool and lets it pick
/// `k` exemplars by number. One stricter retry on an unparseable reply.
#[allow(clippy::too_many_arguments)]
pub fn select_auto<R: Rng + ?Sized>(
    gateway: &Gateway,
    templates: &Templates,
    pool: &ExamplePool,
    schema: &DatabaseSchema,
    question: &str,
    k: usize,
    candidate_count: usize,
    rng: &mut R,
) -> Result<AutoSelection> {
    if candidate_count < k {
        return Err(Error::Precondition(format!("candidate_count {candidate_count} < k {k}")));
    }
    if k == 0 {
        return Ok(AutoSelection { indices: vec![], candidates: vec![], transcript_refs: vec![] });
    }
    let candidates = stratified_sample(pool, candidate_count, rng)?;
    let listing: Vec<String> = candidates
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let e = &pool.entries[p];
            format!("{}. Question: {}\n   SQL: {}", i + 1, e.instance.question, e.gold())
        })
        .collect();
    let k_text = k.to_string();
    let prompt = templates.render(
        "auto_select",
        &[
            ("schema", &schema_ddl(schema)),
            ("question", question),
            ("candidates", &listing.join("\n")),
            ("k", &k_text),
        ],
    )?;
    let first = ChatRequest::user("auto-select", prompt);
    let reply = gateway.complete(&first)?;
    let mut refs = vec![reply.transcript_id.clone()];
    let choice = match parse_choice_list(&reply.text, k) {
        Some(c) => c,
        None => {
            let strict = templates.render("auto_select_strict", &[("k", &k_text), ("count", &candidates.len().to_string())])?;
            let mut retry = first.clone();
            retry.strategy_tag = "auto-select-retry".into();
            retry.messages.push(Message { role: Role::Assistant, content: reply.text.clone() });
            retry.messages.push(Message { role: Role::User, content: strict });
            let again = gateway.complete(&retry)?;
            refs.push(again.transcript_id.clone());
            parse_choice_list(&again.text, k).ok_or_else(|| Error::reply("auto-select", again.text.clone()))?
        }
    };
    let mut indices = Vec::with_capacity(k);
    for n in choice {
        if n == 0 || n > candidates.len() {
            return Err(Error::Precondition(format!(
                "auto-select reply names example {n}, outside 1..={}",
                candidates.len()
            )));
        }
        indices.push(candidates[n - 1]);
    }
    Ok(AutoSelection { indices, candidates, transcript_refs: refs })
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::model::fixtures::singer_schema;
    use crate::model::TaskInstance;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const POOL: [(&str, &str); 8] = [
        ("How many singers are there?", "SELECT count(*) FROM singer"),
        ("List the names of all singers.", "SELECT name FROM singer"),
        ("What is the average age of singers from France?", "SELECT avg(age) FROM singer WHERE country = 'France'"),
        ("Show titles of songs by singers older than 40.", "SELECT T2.title FROM singer AS T1 JOIN song AS T2 ON T1.singer_id = T2.singer_id WHERE T1.age > 40"),
        ("Which country has the most singers?", "SELECT country FROM singer GROUP BY country ORDER BY count(*) DESC LIMIT 1"),
        ("Names of singers without songs.", "SELECT name FROM singer WHERE singer_id NOT IN (SELECT singer_id FROM song)"),
        ("Countries with singers both above 40 and below 30.", "SELECT country FROM singer WHERE age > 40 INTERSECT SELECT country FROM singer WHERE age < 30"),
        ("Oldest singer name and country.", "SELECT name, country FROM singer ORDER BY age DESC LIMIT 1"),
    ];

    fn pool() -> ExamplePool {
        let schemas = HashMap::from([("singers".to_string(), singer_schema())]);
        let instances: Vec<TaskInstance> = POOL
            .iter()
            .enumerate()
            .map(|(i, (q, g))| TaskInstance::new(i, "singers", *q).with_gold(*g))
            .collect();
        ExamplePool::build(&instances, &schemas, &HashedEmbedder::default()).unwrap()
    }

    #[test]
    fn qts_ranks_verbatim_question_first() {
        let p = pool();
        let e = HashedEmbedder::default();
        let q = e.embed("Which country has the most singers?").unwrap();
        assert_eq!(select_qts(&p, &q, 1).unwrap(), vec![4]);
        assert!(select_qts(&p, &q, 0).unwrap().is_empty());
        assert!(select_qts(&p, &q, 9).is_err());
    }

    #[test]
    fn qts_matches_brute_force_on_small_pool() {
        let p = pool();
        let e = HashedEmbedder::default();
        let q = e.embed("How many songs does each singer have?").unwrap();
        let got = select_qts(&p, &q, 2).unwrap();
        // Independent oracle: every pair ordering by (score desc, index asc).
        let scores: Vec<f32> = p.entries.iter().map(|x| x.question_embedding.cosine(&q)).collect();
        let best = (0..scores.len())
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
            .unwrap();
        assert_eq!(got[0], best);
        assert!(scores.iter().enumerate().all(|(i, s)| i == got[0] || i == got[1] || *s <= scores[got[1]]));
    }

    #[test]
    fn fis_prefers_identical_masked_artifacts() {
        let p = pool();
        let target = p.entries[2].fis.clone();
        assert_eq!(select_fis(&p, &target, 1).unwrap(), vec![2]);
        let all = select_fis(&p, &target, p.len()).unwrap();
        assert_eq!(all.len(), p.len());
        let scores: Vec<f32> = all.iter().map(|&i| p.entries[i].fis.combined(&target)).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn stratified_sample_spreads_buckets() {
        let p = pool();
        let sizes: Vec<usize> = p.buckets().iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = stratified_sample(&p, 4, &mut rng).unwrap();
        assert_eq!(s.len(), 4);
        let mut again = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(s, stratified_sample(&p, 4, &mut again).unwrap());
    }

    #[test]
    fn auto_selection_follows_reply() {
        let p = pool();
        let gw = Gateway::mock(|r| Some(if r.prompt().contains("Choose the 1") { "1" } else { "2, 4" }.into()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = select_auto(&gw, &Templates::builtin(), &p, &singer_schema(), "How many singers?", 1, 4, &mut rng).unwrap();
        assert_eq!(one.indices, vec![one.candidates[0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let two = select_auto(&gw, &Templates::builtin(), &p, &singer_schema(), "How many singers?", 2, 4, &mut rng).unwrap();
        assert_eq!(two.indices, vec![two.candidates[1], two.candidates[3]]);
    }

    #[test]
    fn auto_selection_retries_then_fails() {
        let p = pool();
        let gw = Gateway::mock(|r| Some(if r.strategy_tag == "auto-select" { "the first one".into() } else { "3".into() }));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = select_auto(&gw, &Templates::builtin(), &p, &singer_schema(), "q", 1, 4, &mut rng).unwrap();
        assert_eq!(s.indices, vec![s.candidates[2]]);
        assert_eq!(s.transcript_refs.len(), 2);

        let never = Gateway::mock(|_| Some("no idea".into()));
        assert!(select_auto(&never, &Templates::builtin(), &p, &singer_schema(), "q", 1, 4, &mut rng).is_err());
        let out_of_range = Gateway::mock(|_| Some("9".into()));
        assert!(select_auto(&out_of_range, &Templates::builtin(), &p, &singer_schema(), "q", 1, 4, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn qts_equals_full_sort_prefix(words in proptest::collection::vec("[a-z]{2,6}", 1..6), k in 0usize..=8) {
            let p = pool();
            let q = HashedEmbedder::default().embed(&words.join(" ")).unwrap();
            let got = select_qts(&p, &q, k).unwrap();
            let mut all: Vec<(f32, usize)> = p.entries.iter().enumerate().map(|(i, e)| (e.question_embedding.cosine(&q), i)).collect();
            all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let expected: Vec<usize> = all.iter().take(k).map(|x| x.1).collect();
            prop_assert_eq!(got, expected);
        }
    }
}
