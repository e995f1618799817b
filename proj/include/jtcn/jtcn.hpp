#pragma once

#include "jtcn/core.hpp"
#include "jtcn/data.hpp"
#include "jtcn/eval.hpp"
#include "jtcn/model.hpp"
#include "jtcn/param_store.hpp"
#include "jtcn/pipeline.hpp"
#include "jtcn/text.hpp"
#include "jtcn/train.hpp"
