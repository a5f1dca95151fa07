from sklearn.svm import SVC
from sklearn.model_selection import cross_val_score

args = [1.0, 'rbf']
m = SVC(*args)
m2 = SVC(*args, gamma='scale')
sc = cross_val_score(clf, X, y, **opts)
sc2 = cross_val_score(clf, *data)
