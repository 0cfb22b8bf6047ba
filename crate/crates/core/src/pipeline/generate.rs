use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::cot::{build_ss_cot, run_ms_chain, zero_shot_cot_instruction, ZeroShotVariant};
use crate::error::{Error, Result};
use crate::llm::{ChatRequest, Gateway};
use crate::model::{CandidateQuery, CotMode, DatabaseSchema, PromptStrategy, Representation, Selection, TaskInstance};
use crate::prompt::{
    assemble_few_shot, extract_sql, render_code_representation, render_schema_explanation, schema_ddl, FewShotExample,
    Templates,
};
use crate::selection::{mask_target, select_auto, select_fis, select_qts, Embedder, ExamplePool, FisEmbeddings};

/// Everything needed to turn a strategy and an instance into a query.
pub struct Generator<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a Templates,
    pub pool: Option<&'a ExamplePool>,
    /// Schemas of the pool's databases.
    pub pool_schemas: &'a HashMap<String, DatabaseSchema>,
    pub embedder: &'a dyn Embedder,
    pub max_ms_epochs: usize,
    pub auto_candidates: usize,
    pub seed: u64,
}

/// A strategy that failed for one instance.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StrategyFailure {
    pub strategy_id: String,
    pub error: String,
}

impl Generator<'_> {
    /// Per (instance, strategy) random stream, independent of worker order.
    fn rng(&self, instance: &TaskInstance, strategy: &PromptStrategy) -> ChaCha8Rng {
        let digest = Sha256::digest(format!("{}/{}/{}", self.seed, instance.index, strategy.id()).as_bytes());
        let mut seed = [0u8; 8];
        seed.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(seed))
    }

    /// Pool indices for the strategy's shots, most relevant first.
    pub fn select_examples(
        &self,
        strategy: &PromptStrategy,
        instance: &TaskInstance,
        schema: &DatabaseSchema,
        refs: &mut Vec<String>,
    ) -> Result<Vec<usize>> {
        if strategy.shots == 0 {
            return Ok(Vec::new());
        }
        let pool = self
            .pool
            .ok_or_else(|| Error::Config(format!("strategy {} needs an example pool", strategy.id())))?;
        match strategy.selection {
            Selection::None => Ok(Vec::new()),
            Selection::Qts => {
                let q = self.embedder.embed(&instance.question)?;
                select_qts(pool, &q, strategy.shots)
            }
            Selection::Fis => {
                let masked = mask_target(&instance.question, schema);
                let target = FisEmbeddings::of(self.embedder, &masked)?;
                select_fis(pool, &target, strategy.shots)
            }
            Selection::Auto => {
                let mut rng = self.rng(instance, strategy);
                let count = self.auto_candidates.min(pool.len());
                let chosen = select_auto(
                    self.gateway,
                    self.templates,
                    pool,
                    schema,
                    &instance.question,
                    strategy.shots,
                    count,
                    &mut rng,
                )?;
                refs.extend(chosen.transcript_refs);
                Ok(chosen.indices)
            }
        }
    }

    fn example(&self, index: usize) -> Result<(&TaskInstance, &DatabaseSchema)> {
        let pool = self.pool.expect("examples come from the pool");
        let entry = &pool.entries[index];
        let schema = self
            .pool_schemas
            .get(&entry.instance.db_id)
            .ok_or_else(|| Error::Integrity(format!("pool database {} has no schema", entry.instance.db_id)))?;
        Ok((&entry.instance, schema))
    }

    /// Generates one candidate query for the instance.
    pub fn generate(&self, strategy: &PromptStrategy, instance: &TaskInstance, schema: &DatabaseSchema) -> Result<CandidateQuery> {
        strategy.check()?;
        let id = strategy.id();
        let mut refs = Vec::new();
        let mut prompt = render_code_representation(schema, &instance.question)?;
        if strategy.representation == Representation::CodeRepresentationWithSchemaExplanation {
            let (text, tid) = render_schema_explanation(self.gateway, self.templates, schema)?;
            refs.push(tid);
            prompt = prompt.with_schema_explanation(&text);
        }
        let chosen = self.select_examples(strategy, instance, schema, &mut refs)?;

        if strategy.cot == CotMode::Ms {
            let mut demos = String::new();
            for (i, &ix) in chosen.iter().enumerate() {
                let (ex, ex_schema) = self.example(ix)?;
                demos.push_str(&format!(
                    "/* Example {} */\n{}\n-- {}\n{};\n\n",
                    i + 1,
                    schema_ddl(ex_schema),
                    ex.question.trim(),
                    ex.gold_query.as_deref().unwrap_or_default().trim().trim_end_matches(';')
                ));
            }
            let chain = run_ms_chain(self.gateway, self.templates, schema, &instance.question, self.max_ms_epochs, &demos)?;
            refs.extend(chain.transcript_refs.iter().cloned());
            let mut c = CandidateQuery::new(chain.final_query(), id);
            c.transcript_refs = refs;
            return Ok(c);
        }

        let mut examples = Vec::with_capacity(chosen.len());
        for &ix in &chosen {
            let (ex, ex_schema) = self.example(ix)?;
            let cot = if strategy.cot == CotMode::Ss {
                let (block, tid) = build_ss_cot(self.gateway, self.templates, ex, ex_schema)?;
                refs.push(tid);
                Some(block.render())
            } else {
                None
            };
            examples.push(FewShotExample {
                schema: ex_schema.clone(),
                question: ex.question.clone(),
                cot,
                gold: ex.gold_query.clone().unwrap_or_default(),
            });
        }
        // Similarity rankings put the best example first; it should sit
        // closest to the target question.
        if matches!(strategy.selection, Selection::Qts | Selection::Fis) {
            examples.reverse();
        }
        let instructions = match strategy.cot {
            CotMode::ZeroShotStepByStep => zero_shot_cot_instruction(self.templates, ZeroShotVariant::StepByStep)?,
            CotMode::ZeroShotInstructive => zero_shot_cot_instruction(self.templates, ZeroShotVariant::Instructive)?,
            _ => self.templates.render("instruction", &[])?,
        };
        let full = assemble_few_shot(&prompt, &examples, &instructions)?;
        let reply = self.gateway.complete(&ChatRequest::user(id.clone(), full.text))?;
        refs.push(reply.transcript_id);
        let sql = extract_sql(&reply.text).ok_or_else(|| Error::reply(id.clone(), reply.text.clone()))?;
        let mut c = CandidateQuery::new(sql, id);
        c.transcript_refs = refs;
        Ok(c)
    }

    /// One candidate per strategy, in order. Failing strategies are logged
    /// and skipped.
    pub fn candidate_set(
        &self,
        strategies: &[PromptStrategy],
        instance: &TaskInstance,
        schema: &DatabaseSchema,
    ) -> (Vec<CandidateQuery>, Vec<StrategyFailure>) {
        let mut out = Vec::new();
        let mut failures = Vec::new();
        for s in strategies {
            match self.generate(s, instance, schema) {
                Ok(c) => out.push(c),
                Err(e) => {
                    log::warn!("instance {}: strategy {} failed: {e}", instance.index, s.id());
                    failures.push(StrategyFailure { strategy_id: s.id(), error: e.to_string() });
                }
            }
        }
        (out, failures)
    }
}

/// The four default strategies: zero-shot, SS with Auto, SS with FIS and
/// MS with Auto, all one-shot.
pub fn default_candidate_set(generator: &Generator<'_>, instance: &TaskInstance, schema: &DatabaseSchema) -> (Vec<CandidateQuery>, Vec<StrategyFailure>) {
    generator.candidate_set(&crate::ensemble::default_strategies(), instance, schema)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::fixtures::singer_schema;
    use crate::selection::HashedEmbedder;

    pub(crate) const POOL: [(&str, &str); 4] = [
        ("How many singers are there?", "SELECT count(*) FROM singer"),
        ("List the names of all singers.", "SELECT name FROM singer"),
        ("What is the average age of singers from France?", "SELECT avg(age) FROM singer WHERE country = 'France'"),
        ("Show titles of songs by singers older than 40.", "SELECT T2.title FROM singer AS T1 JOIN song AS T2 ON T1.singer_id = T2.singer_id WHERE T1.age > 40"),
    ];

    pub(crate) fn pool() -> (ExamplePool, HashMap<String, DatabaseSchema>) {
        let schemas = HashMap::from([("singers".to_string(), singer_schema())]);
        let instances: Vec<_> = POOL
            .iter()
            .enumerate()
            .map(|(i, (q, g))| TaskInstance::new(i, "singers", *q).with_gold(*g))
            .collect();
        (ExamplePool::build(&instances, &schemas, &HashedEmbedder::default()).unwrap(), schemas)
    }

    /// Answers every stage of every strategy plausibly.
    pub(crate) fn answering_mock() -> Gateway {
        Gateway::mock(|r| {
            let tag = r.strategy_tag.as_str();
            Some(match tag {
                "auto-select" | "auto-select-retry" => "1, 2, 3".into(),
                "ss-objective" => "Find the requested value.".into(),
                "schema-explanation" => "singer lists performers; song lists their songs.".into(),
                "ms-first" | "ms-next" => "SUBQUESTION: Which singers are older than 40?\nSQL: SELECT name FROM singer WHERE age > 40".into(),
                "ms-valid" => "YES".into(),
                _ => "```sql\nSELECT name FROM singer WHERE age > 40\n```".into(),
            })
        })
    }

    fn generator<'a>(gw: &'a Gateway, templates: &'a Templates, pool: &'a ExamplePool, schemas: &'a HashMap<String, DatabaseSchema>) -> Generator<'a> {
        Generator {
            gateway: gw,
            templates,
            pool: Some(pool),
            pool_schemas: schemas,
            embedder: &HashedEmbedder { dim: 256 },
            max_ms_epochs: 5,
            auto_candidates: 4,
            seed: 7,
        }
    }

    #[test]
    fn default_set_is_four_in_order() {
        let (pool, schemas) = pool();
        let gw = answering_mock();
        let t = Templates::builtin();
        let g = generator(&gw, &t, &pool, &schemas);
        let inst = TaskInstance::new(0, "singers", "Names of singers older than 40?");
        let (cands, failures) = default_candidate_set(&g, &inst, &singer_schema());
        assert!(failures.is_empty(), "{failures:?}");
        let ids: Vec<_> = cands.iter().map(|c| c.strategy_id.as_str()).collect();
        assert_eq!(ids, ["zero-shot-cr", "1-shot-ss-auto", "1-shot-ss-fis", "1-shot-ms-auto"]);
        assert!(cands.iter().all(|c| c.sql == "SELECT name FROM singer WHERE age > 40"));
        assert!(cands.iter().all(|c| !c.transcript_refs.is_empty()));
    }

    #[test]
    fn failing_strategy_shortens_the_set() {
        let (pool, schemas) = pool();
        let gw = Gateway::mock(|r| {
            let inner = answering_mock();
            if r.strategy_tag == "1-shot-ss-fis" {
                None
            } else {
                inner.complete(r).ok().map(|c| c.text)
            }
        });
        let t = Templates::builtin();
        let g = generator(&gw, &t, &pool, &schemas);
        let inst = TaskInstance::new(0, "singers", "Names of singers older than 40?");
        let (cands, failures) = default_candidate_set(&g, &inst, &singer_schema());
        assert_eq!(cands.len(), 3);
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].strategy_id, "1-shot-ss-fis");
    }

    #[test]
    fn three_shots_give_three_example_blocks() {
        let (pool, schemas) = pool();
        let gw = answering_mock();
        let t = Templates::builtin();
        let g = generator(&gw, &t, &pool, &schemas);
        let inst = TaskInstance::new(0, "singers", "Names of singers older than 40?");
        for id in ["3-shot-ss-fis", "3-shot-ss-auto"] {
            let s: PromptStrategy = id.parse().unwrap();
            g.generate(&s, &inst, &singer_schema()).unwrap();
            let prompt = gw
                .store()
                .all()
                .into_iter()
                .find(|tr| tr.request.strategy_tag == id)
                .unwrap()
                .request
                .prompt()
                .to_string();
            assert_eq!(prompt.matches("/* Example ").count(), 3, "{id}");
            assert_eq!(prompt.matches("/* Reasoning:").count(), 3, "{id}");
        }
    }

    #[test]
    fn auto_selection_is_seeded() {
        let (pool, schemas) = pool();
        let t = Templates::builtin();
        let s: PromptStrategy = "1-shot-ss-auto".parse().unwrap();
        let inst = TaskInstance::new(0, "singers", "q?");
        let prompts = |seed: u64| {
            let gw = answering_mock();
            let mut g = generator(&gw, &t, &pool, &schemas);
            g.seed = seed;
            g.generate(&s, &inst, &singer_schema()).unwrap();
            gw.store().all().iter().map(|t| t.request.prompt().to_string()).collect::<Vec<_>>()
        };
        assert_eq!(prompts(3), prompts(3));
    }
}
