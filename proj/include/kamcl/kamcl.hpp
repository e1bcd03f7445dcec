#pragma once

#include "kamcl/behavior.hpp"
#include "kamcl/bundle.hpp"
#include "kamcl/checkpoint.hpp"
#include "kamcl/config.hpp"
#include "kamcl/contrastive.hpp"
#include "kamcl/csr.hpp"
#include "kamcl/error.hpp"
#include "kamcl/evaluator.hpp"
#include "kamcl/gradcheck.hpp"
#include "kamcl/gradsuite.hpp"
#include "kamcl/intent.hpp"
#include "kamcl/interaction_graph.hpp"
#include "kamcl/kg_aggregator.hpp"
#include "kamcl/knowledge_graph.hpp"
#include "kamcl/kv.hpp"
#include "kamcl/log.hpp"
#include "kamcl/manifest.hpp"
#include "kamcl/matrix.hpp"
#include "kamcl/model.hpp"
#include "kamcl/ops.hpp"
#include "kamcl/rng.hpp"
#include "kamcl/split.hpp"
#include "kamcl/synth.hpp"
#include "kamcl/tape.hpp"
#include "kamcl/text.hpp"
#include "kamcl/trainer.hpp"
