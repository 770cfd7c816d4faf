#pragma once

#include "cardlab/bench.hpp"
#include "cardlab/checkpoint.hpp"
#include "cardlab/errors.hpp"
#include "cardlab/featurize.hpp"
#include "cardlab/gradcheck.hpp"
#include "cardlab/model.hpp"
#include "cardlab/oracle.hpp"
#include "cardlab/rng.hpp"
#include "cardlab/schema.hpp"
#include "cardlab/states.hpp"
#include "cardlab/store.hpp"
#include "cardlab/subquery.hpp"
#include "cardlab/tape.hpp"
#include "cardlab/tensor.hpp"
#include "cardlab/text.hpp"
#include "cardlab/trainer.hpp"
#include "cardlab/workload.hpp"
