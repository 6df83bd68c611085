from .baselines import (
    FEATURE_NAMES,
    LinearModel,
    feature_summary,
    knn_predict,
    knn_predict_many,
    logistic_fit,
    logistic_predict,
    logistic_proba,
    majority_vote,
    summary_features,
)
from .io import load_model, save_model
from .regression import MLPConfig, MLPRegressor, mlp_fit, mlp_predict, ols_fit, rmse
from .rnn import RecurrentModel, gradient_check, loss_and_gradients, rnn_forward, rnn_train, softmax
from .training import History, TrainConfig, TrainingError
