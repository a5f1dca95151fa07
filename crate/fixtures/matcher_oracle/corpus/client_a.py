from sklearn.svm import SVC
from sklearn.model_selection import cross_val_score, GridSearchCV, KFold

clf = SVC()
clf2 = SVC(random_state=0)
clf3 = SVC(gamma='auto')
clf4 = SVC(1.0, 'rbf', 3, 'auto')
clf5 = SVC(C=0.5, kernel='linear')
clf6 = SVC(**params)
scores = cross_val_score(clf, X, y)
scores2 = cross_val_score(clf, X, y, cv=10)
scores3 = cross_val_score(clf, X, y, None, None, 3)
scores4 = cross_val_score(clf, X)
scores5 = cross_val_score(clf, X, y, scoring='f1')
scores6 = cross_val_score(estimator=clf, X=X, y=y)
grid = GridSearchCV(clf, param_grid)
grid2 = GridSearchCV(clf, param_grid, n_jobs=2)
grid3 = GridSearchCV(clf, param_grid, scoring='accuracy')
kf = KFold()
kf2 = KFold(5)
kf3 = KFold(n_splits=3)
kf4 = KFold(shuffle=True)
