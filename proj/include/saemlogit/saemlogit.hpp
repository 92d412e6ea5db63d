#pragma once

// Logistic regression with covariates missing at random: SAEM estimation,
// Louis standard errors, observed-likelihood BIC, model selection, prediction
// with incomplete rows and the simulation harness.

#include "saemlogit/data_model.hpp"
#include "saemlogit/errors.hpp"
#include "saemlogit/gaussian.hpp"
#include "saemlogit/inference.hpp"
#include "saemlogit/logistic.hpp"
#include "saemlogit/mh_sampler.hpp"
#include "saemlogit/model_spec.hpp"
#include "saemlogit/rng.hpp"
#include "saemlogit/saem.hpp"
#include "saemlogit/selection.hpp"
#include "saemlogit/simulation.hpp"
