#pragma once

#include "mam4wf/checkpoint.hpp"
#include "mam4wf/dataset.hpp"
#include "mam4wf/embedding.hpp"
#include "mam4wf/errors.hpp"
#include "mam4wf/experiment.hpp"
#include "mam4wf/inference.hpp"
#include "mam4wf/io.hpp"
#include "mam4wf/kv.hpp"
#include "mam4wf/metrics.hpp"
#include "mam4wf/model.hpp"
#include "mam4wf/nn.hpp"
#include "mam4wf/rng.hpp"
#include "mam4wf/runner.hpp"
#include "mam4wf/tensor.hpp"
#include "mam4wf/training.hpp"
