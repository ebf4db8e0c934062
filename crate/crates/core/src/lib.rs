pub mod agent_loop;
pub mod dataset_store;
pub mod eval_harness;
pub mod llm_client;
pub mod policy_engine;
pub mod query_gateway;
