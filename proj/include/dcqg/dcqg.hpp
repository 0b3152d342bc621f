#pragma once

#include "dcqg/common.hpp"
#include "dcqg/dataset.hpp"
#include "dcqg/dataset_io.hpp"
#include "dcqg/eval.hpp"
#include "dcqg/generated.hpp"
#include "dcqg/judge.hpp"
#include "dcqg/policy.hpp"
#include "dcqg/policy_io.hpp"
#include "dcqg/rasch.hpp"
#include "dcqg/rasch_io.hpp"
#include "dcqg/simulate.hpp"
#include "dcqg/stats.hpp"
#include "dcqg/text.hpp"
